#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace insmix {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace insmix
