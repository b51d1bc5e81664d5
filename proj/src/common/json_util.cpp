#include "balancedit/common/json_util.hpp"

#include <algorithm>

#include "balancedit/common/error.hpp"

namespace balancedit {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& section) {
    if (!j.is_object()) {
        fail(ErrorKind::config, section + ": expected an object");
    }
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            fail(ErrorKind::config, section + ": unknown key '" + item.key() + "'");
        }
    }
}

}  // namespace balancedit
