#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace emofuse {

// Version of the frozen category table below. Bump when the order changes.
inline constexpr int kCategoryTableVersion = 1;

inline constexpr std::size_t kNumDiscrete = 26;
inline constexpr std::size_t kNumContinuous = 3;

// EMOTIC discrete categories, in the row order used by all reports.
inline constexpr std::array<std::string_view, kNumDiscrete> kCategoryNames = {
    "Affection",     "Anger",        "Annoyance",     "Anticipation",
    "Aversion",      "Confidence",   "Disapproval",   "Disconnection",
    "Disquietment",  "Doubt/Confusion", "Embarrassment", "Engagement",
    "Esteem",        "Excitement",   "Fatigue",       "Fear",
    "Happiness",     "Pain",         "Peace",         "Pleasure",
    "Sadness",       "Sensitivity",  "Suffering",     "Surprise",
    "Sympathy",      "Yearning"};

inline constexpr std::array<std::string_view, kNumContinuous> kContinuousNames = {
    "Valence", "Arousal", "Dominance"};

// Four basic emotions used by the single-label subset experiments.
inline constexpr std::array<std::string_view, 4> kBasicFour = {
    "Anger", "Disconnection", "Happiness", "Sadness"};

constexpr std::optional<std::size_t> category_index(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return i;
  }
  return std::nullopt;
}

inline constexpr std::size_t kDisconnection = *category_index("Disconnection");
inline constexpr std::size_t kHappiness = *category_index("Happiness");

}  // namespace emofuse
