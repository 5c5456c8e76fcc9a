#pragma once

#include "needlenav/geom.hpp"
#include "needlenav/image.hpp"

#include <span>
#include <vector>

namespace needlenav {

struct Blob {
  Pixel centroid;           // intensity-weighted, including the background ring
  int area = 0;             // pixel count
  double perimeter = 0.0;   // sub-pixel contour length at the threshold level
  double circularity = 0.0; // 4*pi*area / perimeter^2, area enclosed by that contour
  double bw_ratio = 0.0;    // foreground pixels / bounding-box pixels
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
  bool contains(double v) const { return v >= min && v <= max; }
};

struct BlobFilterParams {
  int threshold = 40;  // pixels strictly above this are foreground
  Range area{6.0, 20000.0};
  Range circularity{0.7, 1.1};
  Range bw_ratio{0.5, 1.0};

  void validate() const;
};

/// 4*pi*area / perimeter^2. Throws for perimeter <= 0.
double circularity(double area, double perimeter);

/// Threshold, 8-connected labelling, then size, circularity and
/// black-white-ratio filters. Blobs are returned in raster order of their
/// first pixel.
std::vector<Blob> detect_blobs(const GrayImage& img, const BlobFilterParams& params);

struct StereoPair {
  std::size_t left = 0;
  std::size_t right = 0;
};

/// Greedy one-to-one matching on a rectified rig: candidate pairs must agree
/// in row within `row_tol` px and have positive disparity; candidates are
/// taken in order of row discrepancy, then smaller disparity, then
/// left-to-right. Unmatched centroids are dropped.
std::vector<StereoPair> stereo_match(std::span<const Pixel> left, std::span<const Pixel> right,
                                     const StereoRig& rig, double row_tol);
std::vector<StereoPair> stereo_match(std::span<const Blob> left, std::span<const Blob> right,
                                     const StereoRig& rig, double row_tol);

}  // namespace needlenav
