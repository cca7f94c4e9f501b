#pragma once

#include "autoprosam/io/json_fields.hpp"
#include "autoprosam/model/config.hpp"

namespace aps::model {

io::Json to_json(const EncoderConfig& cfg);
io::Json to_json(const ApgConfig& cfg);
io::Json to_json(const DecoderConfig& cfg);
io::Json to_json(const ModelConfig& cfg);

// Strict readers: absent keys keep the current value, unknown keys throw.
void from_json(const io::Json& j, EncoderConfig& cfg, const std::string& context = "encoder");
void from_json(const io::Json& j, ApgConfig& cfg, const std::string& context = "apg");
void from_json(const io::Json& j, DecoderConfig& cfg, const std::string& context = "decoder");
void from_json(const io::Json& j, ModelConfig& cfg, const std::string& context = "model");

std::string upsample_mode_name(UpsampleMode mode);
UpsampleMode parse_upsample_mode(const std::string& name);

}  // namespace aps::model
