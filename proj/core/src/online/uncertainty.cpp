// Copyright 2026 The Twinbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "twinbench/online/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace twinbench::online {

UncertaintyStat uncertainty(const std::vector<ActionValues>& head_values, double eps) {
  if (head_values.size() < 2) throw std::invalid_argument("uncertainty: need at least two heads");
  if (!(eps > 0.0)) throw std::invalid_argument("uncertainty: eps must be positive");
  const double h = static_cast<double>(head_values.size());
  UncertaintyStat st;
  double max_cv = 0.0;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    // Offsets from the first head keep agreeing heads at exactly zero spread.
    const double ref = head_values.front()[a];
    double d = 0.0;
    for (const auto& v : head_values) d += v[a] - ref;
    d /= h;
    double ss = 0.0;
    for (const auto& v : head_values) ss += (v[a] - ref - d) * (v[a] - ref - d);
    const double m = ref + d;
    st.mean[a] = m;
    st.stddev[a] = std::sqrt(ss / (h - 1.0));
    st.cv[a] = st.stddev[a] / (std::abs(m) + eps);
    max_cv = std::max(max_cv, st.cv[a]);
  }
  st.u = std::tanh(max_cv);
  // tanh rounds to 1.0 for large arguments in double precision.
  if (st.u >= 1.0) st.u = std::nextafter(1.0, 0.0);
  return st;
}

void StateNovelty::observe(const State& s) {
  ++n_;
  for (std::size_t k = 0; k < kStateDim; ++k) {
    const double d = s[k] - mean_[k];
    mean_[k] += d / static_cast<double>(n_);
    m2_[k] += d * (s[k] - mean_[k]);
  }
}

double StateNovelty::score(const State& s, double eps) const {
  if (n_ < 2) return 1.0;
  double dist = 0.0, trace = 0.0;
  for (std::size_t k = 0; k < kStateDim; ++k) {
    dist += (s[k] - mean_[k]) * (s[k] - mean_[k]);
    trace += m2_[k] / static_cast<double>(n_ - 1);
  }
  return std::min(1.0, dist / (trace + eps));
}

}  // namespace twinbench::online
