#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfift/tensor.hpp"

namespace vfift {

/// 8-bit RGB image file (PNG or binary PPM, sniffed from the leading bytes)
/// as a [3,H,W] tensor in [0,1]. Gray and alpha PNG images are expanded /
/// flattened to plain RGB.
Tensor load_image(const std::string& path);

/// Quantizes round(clamp(v,0,1)*255) and writes PNG, or binary PPM when the
/// path ends in .ppm.
void save_image(const Tensor& image, const std::string& path);

/// 10*log10(1/MSE) for values in [0,1]; identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b);

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1, reflection padding, channels averaged.
/// Accepts [C,H,W] or [N,C,H,W].
double ssim(const Tensor& a, const Tensor& b);

/// One folder of `<root>/<seq>/im1|im2|im3.(png|ppm)`; im2 is ground truth.
struct TripletRecord {
    std::string name;
    std::string prev_path, gt_path, next_path;
};

struct ScanResult {
    std::vector<TripletRecord> records; // lexicographic by folder name
    int skipped = 0;                    // folders missing a frame
};

ScanResult scan_triplets(const std::string& root);

/// Binary parameter store. Layout: magic "VFIFTCKP", u32 version, u32
/// config length + UTF-8 config text, u32 entry count, then per entry
/// u32 name length, name bytes, u32 rank, u64 dims, little-endian f64 data.
void save_checkpoint(const std::string& path, const ParamMap& params,
                     const std::string& config_text);

struct LoadedCheckpoint {
    uint32_t version = 0;
    std::string config_text;
    std::map<std::string, Tensor> tensors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copies loaded values into the live parameters after verifying that names
/// and shapes line up; the first mismatch is named in the error.
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamMap& params);

} // namespace vfift
