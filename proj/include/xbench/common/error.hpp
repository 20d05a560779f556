#pragma once

#include <stdexcept>
#include <string>

namespace xbench {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing directories, bad config values: not recoverable by retrying.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset content problems (undecodable image, class too small, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace xbench
