// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <vector>

namespace fstest {

struct DistributionPair {
    std::vector<double> student;
    std::vector<double> teacher;
    std::size_t label = 0;
};

/// Random pairs of 2..10 classes. The teacher is strictly positive; the
/// student may put zero mass on classes other than the label.
std::vector<DistributionPair> random_distribution_pairs(std::uint64_t seed, std::size_t count);

/// Cross-entropy at the label and KL(student || teacher), evaluated term by
/// term in extended precision.
long double oracle_cross_entropy(const DistributionPair& p);
long double oracle_kl(const DistributionPair& p);
long double oracle_kd(const DistributionPair& p, long double alpha);

}  // namespace fstest
