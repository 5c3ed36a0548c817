#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lktcn/data.hpp"
#include "lktcn/model.hpp"
#include "lktcn/train.hpp"

namespace lktcn {

/// Everything a run needs. Parsed from line-oriented `key = value` text where
/// `#` starts a comment; every key has a default and unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data;                    // dataset CSV; empty means the generated seasonal series
  std::string split_ratios = "auto";   // "auto" or "train,val,test"
  bool lookback_overlap = true;

  /// Returns false for an unknown key; throws ConfigError for a bad value.
  bool set(const std::string& key, const std::string& value);
  /// Every accepted key, in snapshot order.
  static std::vector<std::string> keys();

  /// Throws ConfigError naming the line for syntax errors and unknown keys.
  static RunConfig parse(std::istream& in, const std::string& source = "<config>");
  static RunConfig load(const std::string& path);
  void apply(std::istream& in, const std::string& source);

  /// Full `key = value` listing that parses back to an equal RunConfig.
  std::string snapshot() const;
  SplitSpec split_spec() const;
  /// Throws ConfigError for any invalid field.
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace lktcn
