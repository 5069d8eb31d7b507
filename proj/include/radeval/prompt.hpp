#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "radeval/text.hpp"

namespace radeval {

/// One chat exchange to send to an LLM: a system message, a user message,
/// and the JSON shape the reply is expected to take.
struct PromptPayload {
    std::string system;
    std::string user;
    nlohmann::json expected_schema;

    std::size_t length() const { return system.size() + user.size(); }

    bool operator==(const PromptPayload&) const = default;
};

/// Removes one surrounding ``` fence (optionally tagged, e.g. ```json) and
/// returns the inner text. Text without a fence is returned trimmed.
inline std::string strip_code_fence(std::string_view text) {
    auto trimmed = text::trim(text);
    const auto open = trimmed.find("```");
    if (open == std::string_view::npos) return std::string(trimmed);
    const auto body_start = trimmed.find('\n', open);
    if (body_start == std::string_view::npos) return std::string(trimmed);
    const auto close = trimmed.find("```", body_start);
    if (close == std::string_view::npos) return std::string(trimmed);
    return std::string(text::trim(trimmed.substr(body_start + 1, close - body_start - 1)));
}

}  // namespace radeval
