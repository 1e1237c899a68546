#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tokgov/backbone.hpp"
#include "tokgov/caption.hpp"
#include "tokgov/encoder.hpp"
#include "tokgov/eval.hpp"
#include "tokgov/sieve.hpp"
#include "tokgov/synthetic.hpp"
#include "tokgov/trainer.hpp"

namespace tokgov {

// Structured run configuration. A single JSON document mirrors every module
// config; unknown keys are rejected with their field path, and dotted-path
// overrides come from the command line.
nlohmann::json default_config();

// Named presets layered over the defaults: "desk" (laptop-sized, the
// default) and "paper" (the large-scale pretraining recipe, for reference).
nlohmann::json preset_config(const std::string& name);

// Throws ConfigError naming the offending path on unknown keys or type
// mismatches, then returns defaults deep-merged with `user`.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user);

// Applies "a.b.c=value" (value parsed as JSON when possible).
void apply_override(nlohmann::json& cfg, const std::string& assignment);

std::string config_digest(const nlohmann::json& cfg);
std::vector<std::pair<std::string, std::string>> flatten_config(const nlohmann::json& cfg);

// Typed views.
SyntheticSpec synthetic_from_config(const nlohmann::json& cfg);
BackboneConfig backbone_from_config(const nlohmann::json& cfg);
SelectionConfig selection_from_config(const nlohmann::json& cfg);
EncoderConfig encoder_from_config(const nlohmann::json& cfg);
TrainConfig train_from_config(const nlohmann::json& cfg);
SieveConfig sieve_from_config(const nlohmann::json& cfg);
PromptConfig prompts_from_config(const nlohmann::json& cfg);
CompareSettings compare_from_config(const nlohmann::json& cfg);

// Governor arms by name: full, topk+rewrite, uniform*, cluster*,
// random-sieve, cluster-sieve, clipscore-sieve.
GovernorSpec governor_spec_by_name(const std::string& name, const nlohmann::json& cfg);
std::vector<std::string> compare_preset_spec_names(const std::string& preset);

}  // namespace tokgov
