#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

namespace balancedit {

// Throws ErrorKind::config naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& section);

}  // namespace balancedit
