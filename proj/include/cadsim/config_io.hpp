#pragma once

#include <string>

#include "cadsim/experiment.hpp"
#include "cadsim/types.hpp"

namespace cadsim {

/// JSON (de)serialization for config files and the Item wire form. Schemas
/// are documented in the README. Unknown keys are rejected so typos fail
/// loudly. File-loading variants resolve "model"/"cluster" entries given as
/// strings relative to the spec's directory.

std::string model_to_json(const ModelConfig& m);
ModelConfig model_from_json(const std::string& text);

std::string cluster_to_json(const ClusterConfig& c);
ClusterConfig cluster_from_json(const std::string& text);

std::string distribution_to_json(const LengthDistribution& d);
LengthDistribution distribution_from_json(const std::string& text);

std::string item_to_json(const Item& it);
Item item_from_json(const std::string& text);

std::string spec_to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const std::string& text);

ModelConfig load_model_file(const std::string& path);
ClusterConfig load_cluster_file(const std::string& path);
ExperimentSpec load_spec_file(const std::string& path);

}  // namespace cadsim
