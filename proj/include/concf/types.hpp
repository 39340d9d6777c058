#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace concf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// One output branch per OCCF objective:
//   A  pairwise ranking (BPR), unbounded dot score
//   B  metric learning (triplet hinge), negative euclidean distance in the unit ball
//   C  pointwise binary cross-entropy, logistic score
//   D  pointwise squared error, unbounded dot score
//   E  multinomial likelihood, raw logit normalized inside the loss
enum class Head : std::uint8_t { A = 0, B = 1, C = 2, D = 3, E = 4 };

inline constexpr std::array<Head, 5> kAllHeads{Head::A, Head::B, Head::C, Head::D,
                                               Head::E};

constexpr std::size_t head_index(Head h) { return static_cast<std::size_t>(h); }
constexpr char head_tag(Head h) { return static_cast<char>('A' + static_cast<int>(h)); }

// Accepts "A".."E" (case-insensitive); throws std::invalid_argument otherwise.
Head parse_head(std::string_view text);

// Parses a head list such as "ABCDE" or "A,C,E".
std::vector<Head> parse_head_list(std::string_view text);

std::string head_list_string(const std::vector<Head>& heads);

}  // namespace concf
