// SPDX-License-Identifier: Apache-2.0
//
// JSON configuration files. Every key is checked: unknown keys are errors,
// missing keys keep their defaults.

#pragma once

#include <string>

#include "prunegrpo/harness.hpp"
#include "prunegrpo/pretrain.hpp"

namespace prunegrpo {

/// A relative "checkpoint" is resolved against the config file's directory.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = ".");
std::string run_config_json(const RunConfig& config);

PretrainConfig load_pretrain_config(const std::string& path);
PretrainConfig parse_pretrain_config(const std::string& json_text);
std::string pretrain_config_json(const PretrainConfig& config);

}  // namespace prunegrpo
