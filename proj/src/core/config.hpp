#pragma once

#include <string>

#include "model.hpp"
#include "training.hpp"

namespace pskn {

// Canonical key=value text for a model config; parse_model_config inverts it
// exactly, doubles included.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

// Applies key=value lines on top of the given configs; keys may address
// either the model or the trainer, later lines win, '#' starts a comment.
// Unknown keys and malformed values are ConfigErrors.
void apply_config_text(const std::string& text, ModelConfig& model,
                       TrainConfig& train);

void load_config_file(const std::string& path, ModelConfig& model,
                      TrainConfig& train);

}  // namespace pskn
