#pragma once

// Model files: a versioned JSON document. Doubles are written in the
// shortest decimal form that reads back to the same bits.

#include <string>

#include "tvcm/model.hpp"

namespace tvcm {

inline constexpr int kModelFormatVersion = 1;

std::string serialize(const TvcmModel& model);

/// Throws LoadError on malformed JSON, schema violations or an unsupported
/// format_version.
TvcmModel deserialize(const std::string& text);

void save_model(const std::string& path, const TvcmModel& model);
TvcmModel load_model(const std::string& path);

}  // namespace tvcm
