#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mtca {

// Lowercased alphanumeric runs of length >= 2.
std::vector<std::string> tokenize(std::string_view text);

// |A ∩ B| / |A ∪ B| over lowercase token sets; 1 when both are empty.
double jaccard_similarity(std::string_view a, std::string_view b);

}  // namespace mtca
