// SPDX-License-Identifier: Apache-2.0
//
// One function per release criterion. Each returns a verdict plus a short
// account of what was measured.
#pragma once

#include <string>

namespace fstest {

struct CheckResult {
    bool passed = false;
    std::string detail;
};

CheckResult check_preprocess_golden();
CheckResult check_psi_property();
CheckResult check_distill_determinism();
CheckResult check_kd_oracle();
CheckResult check_enhancement_traces();
CheckResult check_accuracy_and_taxonomy();
CheckResult check_report_roundtrip();
CheckResult check_pipeline_end_to_end();
CheckResult check_gate_conjunction();

}  // namespace fstest
