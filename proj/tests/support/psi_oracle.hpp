// SPDX-License-Identifier: Apache-2.0
//
// Reference snippet validator and a generator of labeled snippets. Shares no
// code with the library's lexer or validator.
#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fstest {

struct GeneratedSnippet {
    std::string code;
    bool valid = false;   // intended verdict
    std::string defect;   // empty for valid snippets
};

/// `count` snippets alternating valid and defective, reproducible from `seed`.
std::vector<GeneratedSnippet> generate_snippets(std::uint32_t seed, std::size_t count);

struct OracleVerdict {
    bool passed = false;
    std::set<std::string> reasons;
};

OracleVerdict psi_oracle(std::string_view code, std::size_t max_lines = 80);

}  // namespace fstest
