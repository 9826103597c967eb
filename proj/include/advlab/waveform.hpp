#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace advlab {

// Mono waveform in [-1, 1] with its speaker label.
struct Utterance {
  std::string id;
  std::size_t speaker = 0;
  std::vector<double> samples;
};

double peak_abs(const std::vector<double>& x);

}  // namespace advlab
