#pragma once

#include <string>

#include "cimdse/json_io.hpp"
#include "cimdse/optimizer.hpp"
#include "cimdse/pruning.hpp"

namespace cimdse {

json to_json(const Objective& o);
Objective objective_from_json(const json& j);

json to_json(const Constraint& c);
Constraint constraint_from_json(const json& j);

// Partial objects override the defaults.
json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const json& j);

json to_json(const PruningConfig& c);
PruningConfig pruning_config_from_json(const json& j);

// Infeasible scores (-inf) serialize as null.
json to_json(const HistoryEntry& e);
HistoryEntry history_entry_from_json(const json& j);

// Full history included.
json to_json(const OptResult& r);
OptResult opt_result_from_json(const json& j);

json to_json(const ProjectionModel& m);
json to_json(const TopKResult& t);
json to_json(const DepruneReport& r);
json to_json(const PruningAudit& a);

// "iteration,evaluations,best" with an empty best before the first feasible
// point.
std::string convergence_csv(const OptResult& r, const Objective& objective);

}  // namespace cimdse
