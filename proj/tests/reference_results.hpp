// SPDX-License-Identifier: Apache-2.0
//
// Published audio-visual GZSL results (percent), one row per method and
// dataset, used to check harmonic-mean arithmetic.
#pragma once

#include <array>

namespace avood::testing {

struct PublishedRow {
  const char* method;
  const char* dataset;
  double S, U, HM;
};

inline constexpr std::array<PublishedRow, 30> kPublishedRows{{
    {"CJME", "VGGSound", 8.69, 4.78, 6.17},
    {"CJME", "UCF", 26.04, 8.21, 12.48},
    {"CJME", "ActivityNet", 5.55, 4.75, 5.12},
    {"AVGZSLNet", "VGGSound", 18.15, 3.48, 5.83},
    {"AVGZSLNet", "UCF", 52.52, 10.90, 18.05},
    {"AVGZSLNet", "ActivityNet", 8.93, 5.04, 6.44},
    {"AVCA", "VGGSound", 14.90, 4.00, 6.31},
    {"AVCA", "UCF", 51.53, 18.43, 27.15},
    {"AVCA", "ActivityNet", 24.86, 8.02, 12.13},
    {"TCAF", "VGGSound", 9.64, 5.91, 7.33},
    {"TCAF", "UCF", 58.60, 21.74, 31.72},
    {"TCAF", "ActivityNet", 18.70, 7.50, 10.71},
    {"VIB-GZSL", "VGGSound", 18.42, 6.00, 9.05},
    {"VIB-GZSL", "UCF", 90.35, 21.41, 34.62},
    {"VIB-GZSL", "ActivityNet", 22.12, 8.94, 12.73},
    {"AVFS", "VGGSound", 15.20, 5.13, 7.67},
    {"AVFS", "UCF", 54.87, 16.49, 25.36},
    {"AVFS", "ActivityNet", 29.00, 9.13, 13.89},
    {"AVMST", "VGGSound", 14.14, 5.28, 7.68},
    {"AVMST", "UCF", 44.08, 22.63, 29.91},
    {"AVMST", "ActivityNet", 17.75, 9.90, 12.71},
    {"MDFT", "VGGSound", 16.14, 5.97, 8.72},
    {"MDFT", "UCF", 48.79, 23.11, 31.36},
    {"MDFT", "ActivityNet", 18.32, 10.55, 13.39},
    {"Hyper-multiple", "VGGSound", 15.02, 6.75, 9.32},
    {"Hyper-multiple", "UCF", 63.08, 19.10, 29.32},
    {"Hyper-multiple", "ActivityNet", 23.38, 8.67, 12.65},
    {"OOD-gated", "VGGSound", 21.25, 7.57, 11.16},
    {"OOD-gated", "UCF", 65.78, 26.61, 37.89},
    {"OOD-gated", "ActivityNet", 31.9, 9.28, 14.38},
}};

inline constexpr double kPublishedHmTolerance = 0.01;

}  // namespace avood::testing
