#pragma once

#include <cstdint>

#include "concf/dataset.hpp"

namespace concf {

// Planted low-rank preferences: user and item factors ~ N(0, 1/rank) and an
// item popularity offset ~ N(0, popularity^2). Each user keeps the per_user
// items with the largest sharpness * (u.v + b_i) + noise. Gumbel noise makes
// this a draw without replacement proportional to exp(sharpness * (u.v + b_i));
// Gaussian noise gives a Thurstone-style choice instead.
enum class PlantedNoise { Gumbel, Gaussian };

struct PlantedOptions {
  int num_users = 500;
  int num_items = 1000;
  int rank = 8;
  int per_user = 30;
  double sharpness = 4.0;
  double popularity = 0.5;
  PlantedNoise noise = PlantedNoise::Gumbel;
};

InteractionSet planted_factor_data(const PlantedOptions& options, std::uint64_t seed);

}  // namespace concf
