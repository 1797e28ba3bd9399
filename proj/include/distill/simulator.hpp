#pragma once

#include <string>
#include <string_view>

#include "distill/llm_gateway.hpp"

// Offline stand-in for teacher, judge and meta models. Replies depend only on request
// content, so runs through it are reproducible and can be recorded as replay fixtures.
namespace distill::sim {

/// "teacher" is the only built-in simulator; unknown names raise InvalidArgument.
llm::ScriptedBackend::Handler make_handler(std::string_view name);

/// The reply the teacher simulator gives to `request`.
llm::ChatResponse teacher_reply(const llm::ChatRequest& request);

}  // namespace distill::sim
