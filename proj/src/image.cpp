#include "mpcs/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "mpcs/common.hpp"

namespace mpcs {

ImageF to_float(const ImageU8& img) {
    ImageF out(img.h, img.w);
    for (size_t i = 0; i < img.px.size(); ++i) out.px[i] = img.px[i] / 255.0;
    return out;
}

ImageU8 to_u8(const ImageF& img) {
    ImageU8 out(img.h, img.w);
    for (size_t i = 0; i < img.px.size(); ++i) {
        const double v = std::clamp(img.px[i], 0.0, 1.0);
        out.px[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

void save_png(const std::filesystem::path& path, const ImageU8& img) {
    cv::Mat mat(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            auto& p = mat.at<cv::Vec3b>(y, x);  // BGR
            p[0] = img.at(y, x, 2);
            p[1] = img.at(y, x, 1);
            p[2] = img.at(y, x, 0);
        }
    if (!cv::imwrite(path.string(), mat))
        throw DataError("failed to write PNG: " + path.string());
}

ImageU8 load_png(const std::filesystem::path& path) {
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (mat.empty()) throw DataError("unreadable image: " + path.string());
    ImageU8 img(mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y)
        for (int x = 0; x < mat.cols; ++x) {
            const auto& p = mat.at<cv::Vec3b>(y, x);
            img.at(y, x, 0) = p[2];
            img.at(y, x, 1) = p[1];
            img.at(y, x, 2) = p[0];
        }
    return img;
}

void save_png_gray(const std::filesystem::path& path, const MaskU8& mask) {
    cv::Mat mat(mask.h, mask.w, CV_8UC1);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) mat.at<uint8_t>(y, x) = mask.at(y, x);
    if (!cv::imwrite(path.string(), mat))
        throw DataError("failed to write PNG: " + path.string());
}

MaskU8 load_png_gray(const std::filesystem::path& path) {
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (mat.empty()) throw DataError("unreadable image: " + path.string());
    MaskU8 mask(mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y)
        for (int x = 0; x < mat.cols; ++x) mask.at(y, x) = mat.at<uint8_t>(y, x);
    return mask;
}

}  // namespace mpcs
