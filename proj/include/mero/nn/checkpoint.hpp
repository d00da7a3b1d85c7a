#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mero/nn/module.hpp"

// Checkpoint container, version 1:
//
//   line 1   "MEROCKPT 1"
//   line 2   byte length L of the JSON header, decimal
//   next L   JSON header: {"kind", "config", "tensors": [{"name","shape","offset"}]}
//   rest     float64 little-endian tensor payloads; offset counts doubles from
//            the start of the payload section
//
// Tensors are written in the module's canonical parameter order.
namespace mero::nn {

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;

  // Copies every stored tensor into the module's parameters. Missing names,
  // extra names and shape mismatches are errors.
  void apply_to(Module& module) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     Module& module);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mero::nn
