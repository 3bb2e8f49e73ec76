#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepwise/types.hpp"

namespace stepwise {

/// Feature maps available to the estimators. Neither receives the validity
/// oracle: arithmetic consistency is only visible through a mod-9 check on
/// the written steps, which misses some errors.
enum class FeatureSet { Structural, StateComplete };

std::string_view to_string(FeatureSet f);
FeatureSet feature_set_from_string(std::string_view s);
/// Version tag stored with fitted estimators.
std::string feature_version(FeatureSet f);

/// Sorted, duplicate-free list of active binary features for (Q, P_i).
std::vector<std::string> extract_features(const Question& q, std::span<const Step> prefix, FeatureSet set);

/// Casting-out-nines check of a single written step; a division must also
/// divide evenly. Misses errors in divisions by 9.
bool checksum_ok(const Step& s);

}  // namespace stepwise
