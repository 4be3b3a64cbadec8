#pragma once

#include <string>

#include <json.hpp>

#include "powerlink/explainer.hpp"
#include "powerlink/kg.hpp"

namespace powerlink {

/// Target (names and ids), paths with per-edge scores, per-epoch loss
/// breakdown, and the given config echo.
nlohmann::json explanation_to_json(const Explanation& e, const KnowledgeGraph& g, const nlohmann::json& config);

/// Graphviz rendering: the target as a dashed red edge, each path in its own
/// color, remaining gc edges in light gray.
std::string explanation_to_dot(const Explanation& e, const ComputationGraph& gc, const KnowledgeGraph& g);

nlohmann::json triple_to_json(const Triple& t, const KnowledgeGraph& g);

}  // namespace powerlink
