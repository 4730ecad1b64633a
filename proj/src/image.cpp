#include "xmd/image.hpp"

#include "xmd/common.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace xmd {

PreprocessPlan plan_preprocess(int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("preprocess_image: image must have at least one pixel");
    PreprocessPlan plan;
    if (width <= height) {
        plan.resized_width = kImageSide;
        plan.resized_height = static_cast<int>(static_cast<long long>(height) * kImageSide / width);
    } else {
        plan.resized_height = kImageSide;
        plan.resized_width = static_cast<int>(static_cast<long long>(width) * kImageSide / height);
    }
    plan.scale_x = static_cast<double>(plan.resized_width) / width;
    plan.scale_y = static_cast<double>(plan.resized_height) / height;
    plan.crop_x = (plan.resized_width - kImageSide) / 2;
    plan.crop_y = (plan.resized_height - kImageSide) / 2;
    return plan;
}

RawImage resize_bilinear(const RawImage& image, int width, int height) {
    RawImage out;
    out.width = width;
    out.height = height;
    out.rgb.resize(static_cast<std::size_t>(width) * height * 3);
    const double sx = static_cast<double>(image.width) / width;
    const double sy = static_cast<double>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = image.at(x0, y0, c) * (1 - wx) + image.at(x1, y0, c) * wx;
                const double bottom = image.at(x0, y1, c) * (1 - wx) + image.at(x1, y1, c) * wx;
                const double v = top * (1 - wy) + bottom * wy;
                out.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

ImageTensor preprocess_image(const RawImage& image, const ChannelNorm& norm, std::string source_id) {
    if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw InvalidArgument("preprocess_image: pixel buffer does not match dimensions");
    }
    const PreprocessPlan plan = plan_preprocess(image.width, image.height);
    const RawImage resized = (plan.resized_width == image.width && plan.resized_height == image.height)
                                 ? image
                                 : resize_bilinear(image, plan.resized_width, plan.resized_height);
    ImageTensor tensor;
    tensor.source_id = std::move(source_id);
    tensor.pixels.resize(static_cast<std::size_t>(kImageSide) * kImageSide * 3);
    for (int y = 0; y < kImageSide; ++y) {
        for (int x = 0; x < kImageSide; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = resized.at(x + plan.crop_x, y + plan.crop_y, c) / 255.0F;
                tensor.pixels[(static_cast<std::size_t>(y) * kImageSide + x) * 3 + c] =
                    (v - norm.mean[c]) / norm.stddev[c];
            }
        }
    }
    return tensor;
}

RawImage decode_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw LoadError("cannot decode image: " + path.string());
    RawImage out;
    out.width = bgr.cols;
    out.height = bgr.rows;
    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            const std::size_t o = (static_cast<std::size_t>(y) * out.width + x) * 3;
            out.rgb[o] = row[x][2];
            out.rgb[o + 1] = row[x][1];
            out.rgb[o + 2] = row[x][0];
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            row[x] = cv::Vec3b(image.at(x, y, 2), image.at(x, y, 1), image.at(x, y, 0));
        }
    }
    if (!cv::imwrite(path.string(), bgr)) throw LoadError("cannot write image: " + path.string());
}

}  // namespace xmd
