#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace xbench::model {

enum class Family { VIT_B16, DEIT_T16, DINO_S16, SWIN_T };

inline constexpr Family kAllFamilies[] = {Family::VIT_B16, Family::DEIT_T16, Family::DINO_S16,
                                          Family::SWIN_T};

/// Architecture of a plain ViT (class token, global attention).
struct VitConfig {
  int image_size = 224;
  int patch = 16;
  int dim = 768;
  int depth = 12;
  int heads = 12;
  int mlp_hidden = 3072;
  float ln_eps = 1e-12f;
};

/// Hierarchical shifted-window transformer.
struct SwinConfig {
  int image_size = 224;
  int patch = 4;
  int embed_dim = 96;
  std::vector<int> depths{2, 2, 6, 2};
  std::vector<int> heads{3, 6, 12, 24};
  int window = 7;
  int mlp_ratio = 4;
  float ln_eps = 1e-5f;
};

using ArchConfig = std::variant<VitConfig, SwinConfig>;

struct BackboneSpec {
  Family family = Family::VIT_B16;
  std::string checkpoint_id;
  int patch_size = 16;
  bool has_class_token = true;
  int grid_rows = 14;  // token grid of the Grad-CAM layer at 224 input
  int grid_cols = 14;
  ArchConfig arch;
};

BackboneSpec backbone_spec(Family family);
// Accepts "vit", "deit", "dino", "swin" and the enum spellings
// ("VIT_B16", "vit_b16", ...). Throws ConfigError otherwise.
Family parse_family(std::string_view name);
std::string_view family_name(Family family);     // "VIT_B16"
std::string_view family_display(Family family);  // "ViT"

}  // namespace xbench::model
