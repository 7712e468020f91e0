#pragma once

#include <json.hpp>

#include "hq/model.hpp"

namespace hq::detail {

/// Parses and validates model dims from an HQTM/HQTM-Q header.
ModelConfig config_from_header(const nlohmann::json& header);

}  // namespace hq::detail
