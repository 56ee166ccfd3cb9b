#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace specmix {

/// H x W raster of D-band spectra, band-interleaved by pixel (all bands of a
/// pixel are contiguous). Stored at the 32-bit precision of the file format.
struct HyperspectralCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> data;
  std::vector<double> wavelengths;  // optional, nm
  std::vector<std::string> band_names;  // optional

  std::size_t pixels() const { return height * width; }
  std::span<const float> pixel(std::size_t p) const { return {data.data() + p * bands, bands}; }
  std::span<float> pixel(std::size_t p) { return {data.data() + p * bands, bands}; }
};

/// D x K endmember signatures, row-major (row = band, column = material).
struct EndmemberMatrix {
  std::size_t bands = 0;
  std::size_t materials = 0;
  std::vector<double> data;
  std::vector<std::string> names;

  double at(std::size_t band, std::size_t material) const { return data[band * materials + material]; }
  double& at(std::size_t band, std::size_t material) { return data[band * materials + material]; }
};

/// H x W x K per-pixel material fractions.
struct AbundanceField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t materials = 0;
  std::vector<double> data;
  std::vector<std::string> names;

  std::size_t pixels() const { return height * width; }
  std::span<const double> pixel(std::size_t p) const { return {data.data() + p * materials, materials}; }
  std::span<double> pixel(std::size_t p) { return {data.data() + p * materials, materials}; }
};

}  // namespace specmix
