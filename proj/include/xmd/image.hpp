#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xmd {

inline constexpr int kImageSide = 224;

/// Decoded 8-bit RGB image, row-major, channels interleaved.
struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    [[nodiscard]] std::uint8_t at(int x, int y, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

struct ChannelNorm {
    std::array<float, 3> mean{0.485F, 0.456F, 0.406F};
    std::array<float, 3> stddev{0.229F, 0.224F, 0.225F};
};

/// 224x224x3 normalized tensor, HWC layout.
struct ImageTensor {
    std::vector<float> pixels;
    std::string source_id;

    [[nodiscard]] float at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * kImageSide + x) * 3 + c];
    }
};

/// Geometry of the resize-shorter-side-then-center-crop transform.
struct PreprocessPlan {
    int resized_width = 0;
    int resized_height = 0;
    int crop_x = 0;
    int crop_y = 0;
    double scale_x = 1.0;
    double scale_y = 1.0;
};

/// Shorter side becomes 224 exactly; the longer side is scaled by the same
/// factor and truncated toward zero.
PreprocessPlan plan_preprocess(int width, int height);

RawImage resize_bilinear(const RawImage& image, int width, int height);

ImageTensor preprocess_image(const RawImage& image, const ChannelNorm& norm = {}, std::string source_id = {});

/// PNG/JPEG decode. Throws LoadError naming the path on failure.
RawImage decode_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace xmd
