#pragma once

// Independent oracles for mask geometry and image metrics, shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <queue>
#include <utility>
#include <vector>

#include "scenemaker/deocc.hpp"
#include "scenemaker/rng.hpp"

namespace testing {

using namespace scenemaker;

inline int connected_components(const MaskPattern& m) {
  std::vector<int> label(m.data.size(), -1);
  int count = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x) || label[static_cast<std::size_t>(y * m.width + x)] >= 0) continue;
      std::queue<std::pair<int, int>> q;
      q.push({y, x});
      label[static_cast<std::size_t>(y * m.width + x)] = count;
      while (!q.empty()) {
        const auto [cy, cx] = q.front();
        q.pop();
        const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width || !m.at(ny, nx)) continue;
          int& l = label[static_cast<std::size_t>(ny * m.width + nx)];
          if (l < 0) {
            l = count;
            q.push({ny, nx});
          }
        }
      }
      ++count;
    }
  }
  return count;
}

inline bool touches_border(const MaskPattern& m) {
  for (int y = 0; y < m.height; ++y) {
    if (m.at(y, 0) || m.at(y, m.width - 1)) return true;
  }
  for (int x = 0; x < m.width; ++x) {
    if (m.at(0, x) || m.at(m.height - 1, x)) return true;
  }
  return false;
}

inline bool is_single_rectangle(const MaskPattern& m) {
  int y0 = m.height, y1 = -1, x0 = m.width, x1 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  if (y1 < 0) return false;
  return m.masked_count() == static_cast<std::size_t>((y1 - y0 + 1) * (x1 - x0 + 1));
}

inline ImageGrid noisy_image(std::uint64_t seed, int h, int w, int c) {
  Rng rng(seed);
  ImageGrid img = ImageGrid::filled(h, w, c, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) img.at(y, x, k) = 0.5 + 0.3 * std::sin(0.2 * x + 0.1 * y + k) * rng.uniform();
    }
  }
  return img;
}

// Direct windowed SSIM: weighted means, then two-pass weighted
// (co)variances, per 11x11 window, averaged over windows and channels.
inline double oracle_ssim(const ImageGrid& a, const ImageGrid& b) {
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  for (double& v : g) v /= gs;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  long n = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = 0; y + 11 <= a.height; ++y) {
      for (int x = 0; x + 11 <= a.width; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            ma += g[i] * g[j] * a.at(y + i, x + j, c);
            mb += g[i] * g[j] * b.at(y + i, x + j, c);
          }
        }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            const double da = a.at(y + i, x + j, c) - ma, db = b.at(y + i, x + j, c) - mb;
            va += g[i] * g[j] * da * da;
            vb += g[i] * g[j] * db * db;
            cov += g[i] * g[j] * da * db;
          }
        }
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++n;
      }
    }
  }
  return total / double(n);
}

}  // namespace testing
