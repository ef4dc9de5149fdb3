// SPDX-License-Identifier: Apache-2.0
//
// Enhancement-loop scenarios with histories traced by hand from the
// dual-threshold rules (accept <= 0.2 < keep <= 0.5 < drop).
#pragma once

#include "finesec/enhance.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fstest {

struct TraceCase {
    std::string name;
    int max_iterations = 5;
    std::vector<std::string> models;
    /// Combined loss per model and round.
    std::map<std::string, std::vector<double>> losses;
    nlohmann::json edits = nlohmann::json::array();
    /// One line per round, in describe_round() format.
    std::vector<std::string> expected_rounds;
    std::size_t expected_revisions = 0;
    std::size_t expected_final_items = 0;
    std::vector<std::string> expected_accepted;
};

/// accept-first-round, keep-twice-then-accept, all-dropped, round-limit.
std::vector<TraceCase> hand_traced_cases();

/// "k=<k> on=<tag> <id>=<status>@<loss> ... sat=<0|1> mod=<0|1>[ next=<tag>] accepted=<ids|->"
std::string describe_round(const finesec::enhance::IterationState& s);

struct TraceOutcome {
    finesec::enhance::EnhanceResult result;
    std::vector<std::string> rounds;
    std::size_t revisions = 0;
    std::size_t final_items = 0;
    /// Rounds with at least one keep verdict equal the number of dataset
    /// version changes.
    bool parity_holds = false;
    std::string mismatch;  // empty when the run matches the hand trace
};

TraceOutcome run_trace(const TraceCase& c, const std::filesystem::path& work_dir);

/// The four-item dataset every trace starts from.
finesec::distill::DistilledDataset trace_dataset();

}  // namespace fstest
