#include "needlenav/blobdetect.hpp"

#include "needlenav/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

namespace needlenav {

void BlobFilterParams::validate() const {
  if (threshold < 0 || threshold > 255) throw Error(ErrorCode::InvalidArgument, "blob filter: threshold outside 0..255");
  for (const Range* r : {&area, &circularity, &bw_ratio})
    if (!(r->min <= r->max)) throw Error(ErrorCode::InvalidArgument, "blob filter: range min exceeds max");
}

double circularity(double area, double perimeter) {
  if (!(perimeter > 0.0)) throw Error(ErrorCode::InvalidArgument, "circularity: perimeter must be > 0");
  return 4.0 * kPi * area / (perimeter * perimeter);
}

namespace {

// Closed iso-intensity contour of one component, traced at the foreground
// threshold with linear interpolation between pixel centres. Area and length
// come from the same polygon, so their circularity never exceeds 1 and does
// not jump with the sub-pixel phase of small discs the way pixel counts do.
struct Contour {
  double area = 0.0;
  double length = 0.0;
};

// Marching squares over the component's bounding box (plus a one-pixel
// margin). Pixels of other components are clamped to the threshold so they
// fall outside. Each cell contributes the area of its inside polygon and the
// length of the contour piece crossing it; saddles join the two inside
// corners, which matches 8-connected labelling.
Contour measure_contour(const GrayImage& img, const Blob& blob, const std::vector<int>& label, int component,
                        int threshold) {
  const auto value = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.0;
    const double v = img.at(x, y);
    const std::size_t idx = static_cast<std::size_t>(y) * img.width + x;
    return label[idx] == component ? v : std::min(v, static_cast<double>(threshold));
  };
  const double level = threshold;
  Contour c;
  std::array<Pixel, 8> poly;
  std::array<bool, 8> crossing;
  for (int y = blob.min_y - 1; y <= blob.max_y; ++y) {
    for (int x = blob.min_x - 1; x <= blob.max_x; ++x) {
      const std::array<std::pair<int, int>, 4> corner{{{x, y}, {x + 1, y}, {x + 1, y + 1}, {x, y + 1}}};
      std::array<double, 4> v;
      for (int k = 0; k < 4; ++k) v[k] = value(corner[k].first, corner[k].second);
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        const int j = (k + 1) % 4;
        const bool in_k = v[k] > level, in_j = v[j] > level;
        if (in_k) {
          poly[n] = {double(corner[k].first), double(corner[k].second)};
          crossing[n++] = false;
        }
        if (in_k != in_j) {
          const double t = (v[k] - level) / (v[k] - v[j]);
          poly[n] = {corner[k].first + t * (corner[j].first - corner[k].first),
                     corner[k].second + t * (corner[j].second - corner[k].second)};
          crossing[n++] = true;
        }
      }
      for (int k = 0; k < n; ++k) {
        const int j = (k + 1) % n;
        c.area += 0.5 * (poly[k].u * poly[j].v - poly[j].u * poly[k].v);
        if (crossing[k] && crossing[j]) c.length += std::hypot(poly[j].u - poly[k].u, poly[j].v - poly[k].v);
      }
    }
  }
  c.area = std::abs(c.area);
  return c;
}

}  // namespace

std::vector<Blob> detect_blobs(const GrayImage& img, const BlobFilterParams& params) {
  if (!img.valid()) throw Error(ErrorCode::InvalidArgument, "detect_blobs: invalid image");
  params.validate();

  const int w = img.width;
  const int h = img.height;
  const auto fg = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < w && y < h && img.at(x, y) > params.threshold;
  };

  std::vector<std::uint8_t> visited(img.pixels.size(), 0);
  std::vector<int> ring_owner(img.pixels.size(), -1);
  std::vector<int> label(img.pixels.size(), -1);
  std::vector<std::pair<int, int>> stack, members;
  int component = 0;
  std::vector<Blob> blobs;

  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const std::size_t idx0 = static_cast<std::size_t>(y0) * w + x0;
      if (visited[idx0] || !fg(x0, y0)) continue;

      Blob blob;
      blob.min_x = blob.max_x = x0;
      blob.min_y = blob.max_y = y0;
      double wsum = 0.0, wu = 0.0, wv = 0.0;

      visited[idx0] = 1;
      stack.assign(1, {x0, y0});
      members.clear();
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        members.emplace_back(x, y);
        const double intensity = img.at(x, y);
        ++blob.area;
        wsum += intensity;
        wu += intensity * x;
        wv += intensity * y;
        blob.min_x = std::min(blob.min_x, x);
        blob.max_x = std::max(blob.max_x, x);
        blob.min_y = std::min(blob.min_y, y);
        blob.max_y = std::max(blob.max_y, y);

        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if ((dx == 0 && dy == 0) || !fg(nx, ny)) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (visited[nidx]) continue;
            visited[nidx] = 1;
            stack.emplace_back(nx, ny);
          }
        }
      }

      // Sub-threshold anti-aliased edge pixels still carry position
      // information; leaving them out biases the centroid by sub-pixel phase.
      for (const auto& [x, y] : members) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h || fg(nx, ny)) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (ring_owner[nidx] == component) continue;
            ring_owner[nidx] = component;
            const double intensity = img.at(nx, ny);
            wsum += intensity;
            wu += intensity * nx;
            wv += intensity * ny;
          }
        }
      }

      blob.centroid = {wu / wsum, wv / wsum};
      for (const auto& [x, y] : members) label[static_cast<std::size_t>(y) * w + x] = component;
      const Contour contour = measure_contour(img, blob, label, component, params.threshold);
      blob.perimeter = contour.length;
      blob.circularity = circularity(contour.area, contour.length);
      const double bbox = static_cast<double>(blob.max_x - blob.min_x + 1) * (blob.max_y - blob.min_y + 1);
      blob.bw_ratio = blob.area / bbox;

      if (params.area.contains(blob.area) && params.circularity.contains(blob.circularity) &&
          params.bw_ratio.contains(blob.bw_ratio))
        blobs.push_back(blob);
      ++component;
    }
  }
  return blobs;
}

std::vector<StereoPair> stereo_match(std::span<const Pixel> left, std::span<const Pixel> right,
                                     const StereoRig& rig, double row_tol) {
  if (!rig.is_rectified()) throw Error(ErrorCode::InvalidArgument, "stereo_match: rig is not rectified");

  struct Candidate {
    double row_diff;
    double disparity;
    std::size_t l, r;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < left.size(); ++i) {
    for (std::size_t j = 0; j < right.size(); ++j) {
      const double row_diff = std::abs(left[i].v - right[j].v);
      const double disparity = left[i].u - right[j].u;
      if (row_diff <= row_tol && disparity > 0.0) candidates.push_back({row_diff, disparity, i, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.row_diff, a.disparity, a.l, a.r) < std::tie(b.row_diff, b.disparity, b.l, b.r);
  });

  std::vector<bool> used_l(left.size(), false), used_r(right.size(), false);
  std::vector<StereoPair> pairs;
  for (const Candidate& c : candidates) {
    if (used_l[c.l] || used_r[c.r]) continue;
    used_l[c.l] = used_r[c.r] = true;
    pairs.push_back({c.l, c.r});
  }
  std::sort(pairs.begin(), pairs.end(), [](const StereoPair& a, const StereoPair& b) { return a.left < b.left; });
  return pairs;
}

std::vector<StereoPair> stereo_match(std::span<const Blob> left, std::span<const Blob> right,
                                     const StereoRig& rig, double row_tol) {
  std::vector<Pixel> l, r;
  l.reserve(left.size());
  r.reserve(right.size());
  for (const Blob& b : left) l.push_back(b.centroid);
  for (const Blob& b : right) r.push_back(b.centroid);
  return stereo_match(std::span<const Pixel>(l), std::span<const Pixel>(r), rig, row_tol);
}

}  // namespace needlenav
