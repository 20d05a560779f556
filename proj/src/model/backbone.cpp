#include "xbench/model/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "xbench/common/error.hpp"

namespace xbench::model {

BackboneSpec backbone_spec(Family family) {
  BackboneSpec s;
  s.family = family;
  switch (family) {
    case Family::VIT_B16:
      s.checkpoint_id = "google/vit-base-patch16-224";
      s.arch = VitConfig{224, 16, 768, 12, 12, 3072, 1e-12f};
      break;
    case Family::DEIT_T16:
      s.checkpoint_id = "facebook/deit-tiny-patch16-224";
      s.arch = VitConfig{224, 16, 192, 12, 3, 768, 1e-12f};
      break;
    case Family::DINO_S16:
      s.checkpoint_id = "facebook/dino-vits16";
      s.arch = VitConfig{224, 16, 384, 12, 6, 1536, 1e-12f};
      break;
    case Family::SWIN_T:
      s.checkpoint_id = "microsoft/swin-tiny-patch4-window7-224";
      s.patch_size = 4;
      s.has_class_token = false;
      s.grid_rows = 7;
      s.grid_cols = 7;
      s.arch = SwinConfig{};
      return s;
  }
  s.patch_size = 16;
  s.has_class_token = true;
  s.grid_rows = 14;
  s.grid_cols = 14;
  return s;
}

Family parse_family(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "vit" || n == "vit_b16") return Family::VIT_B16;
  if (n == "deit" || n == "deit_t16") return Family::DEIT_T16;
  if (n == "dino" || n == "dino_s16") return Family::DINO_S16;
  if (n == "swin" || n == "swin_t") return Family::SWIN_T;
  throw ConfigError("unknown backbone family '" + std::string(name) + "'");
}

std::string_view family_name(Family family) {
  switch (family) {
    case Family::VIT_B16: return "VIT_B16";
    case Family::DEIT_T16: return "DEIT_T16";
    case Family::DINO_S16: return "DINO_S16";
    case Family::SWIN_T: return "SWIN_T";
  }
  return "?";
}

std::string_view family_display(Family family) {
  switch (family) {
    case Family::VIT_B16: return "ViT";
    case Family::DEIT_T16: return "DeiT";
    case Family::DINO_S16: return "DINO";
    case Family::SWIN_T: return "Swin";
  }
  return "?";
}

}  // namespace xbench::model
