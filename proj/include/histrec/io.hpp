#pragma once

#include <string>

#include "histrec/svf.hpp"

namespace histrec {

/// ".svf" container: magic "SVF1", little-endian u32 height, u32 width,
/// u32 channels (=2), f64 spacing, then the xi1 plane followed by the xi2
/// plane as row-major f32.
void write_svf(const std::string& path, const SvfField& v);
SvfField read_svf(const std::string& path);

/// Binary PGM (P5, maxval 255). Pixel values are clamped to [0, 255] and
/// rounded on write.
void write_pgm(const std::string& path, const ImageSection& img);
/// Reads pixels; the mask is set to pixel > 0 unless `mask_from_pixels` is
/// false, in which case it is all-ones.
ImageSection read_pgm(const std::string& path, bool mask_from_pixels = false);

/// Binary mask I/O via PGM with values {0, 255}.
void write_mask_pgm(const std::string& path, const ImageSection& img);
void read_mask_pgm(const std::string& path, ImageSection& img);

}  // namespace histrec
