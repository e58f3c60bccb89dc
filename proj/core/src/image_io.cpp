#include "colonformer/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace colonformer {

Tensor load_image_rgb(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw Error("cannot read image: " + path.string());
    const std::int64_t h = img.rows, w = img.cols;
    Tensor out(Shape{1, 3, h, w});
    Scalar* r = out.data();
    Scalar* g = r + h * w;
    Scalar* b = g + h * w;
    for (std::int64_t y = 0; y < h; ++y) {
        const cv::Vec3b* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x) {
            b[y * w + x] = row[x][0] / 255.0;
            g[y * w + x] = row[x][1] / 255.0;
            r[y * w + x] = row[x][2] / 255.0;
        }
    }
    return out;
}

Tensor load_mask_gray(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw Error("cannot read mask: " + path.string());
    const std::int64_t h = img.rows, w = img.cols;
    Tensor out(Shape{1, 1, h, w});
    Scalar* dst = out.data();
    for (std::int64_t y = 0; y < h; ++y) {
        const std::uint8_t* row = img.ptr<std::uint8_t>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x) dst[y * w + x] = row[x] / 255.0;
    }
    return out;
}

std::pair<std::int64_t, std::int64_t> image_size(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw Error("cannot read image: " + path.string());
    return {img.rows, img.cols};
}

namespace {
cv::Mat to_gray8(const Tensor& t) {
    if (t.dim() != 4 || t.size(0) != 1 || t.size(1) != 1) {
        throw Error("expected (1,1,H,W) tensor, got " + shape_str(t.shape()));
    }
    const std::int64_t h = t.size(2), w = t.size(3);
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
    const Scalar* src = t.data();
    for (std::int64_t y = 0; y < h; ++y) {
        std::uint8_t* row = img.ptr<std::uint8_t>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x) {
            const Scalar v = std::min(std::max(src[y * w + x], 0.0), 1.0);
            row[x] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
        }
    }
    return img;
}
}  // namespace

void save_mask_png(const std::filesystem::path& path, const Tensor& mask) {
    if (!cv::imwrite(path.string(), to_gray8(mask))) {
        throw Error("cannot write mask: " + path.string());
    }
}

void save_gray_png(const std::filesystem::path& path, const Tensor& gray) {
    if (!cv::imwrite(path.string(), to_gray8(gray))) {
        throw Error("cannot write image: " + path.string());
    }
}

void save_overlay_png(const std::filesystem::path& path, const Tensor& image_rgb,
                      const Tensor& mask) {
    if (image_rgb.dim() != 4 || image_rgb.size(1) != 3 || mask.dim() != 4) {
        throw Error("overlay expects (1,3,H,W) image and (1,1,H,W) mask");
    }
    const std::int64_t h = image_rgb.size(2), w = image_rgb.size(3);
    if (mask.size(2) != h || mask.size(3) != w) throw Error("overlay: image/mask size mismatch");
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    const Scalar* r = image_rgb.data();
    const Scalar* g = r + h * w;
    const Scalar* b = g + h * w;
    const Scalar* m = mask.data();
    auto on = [&](std::int64_t y, std::int64_t x) {
        return y >= 0 && y < h && x >= 0 && x < w && m[y * w + x] != 0.0;
    };
    for (std::int64_t y = 0; y < h; ++y) {
        cv::Vec3b* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x) {
            const bool boundary = on(y, x) && (!on(y - 1, x) || !on(y + 1, x) || !on(y, x - 1) ||
                                               !on(y, x + 1));
            if (boundary) {
                row[x] = cv::Vec3b(0, 255, 0);
            } else {
                auto q = [](Scalar v) {
                    return static_cast<std::uint8_t>(std::min(std::max(v, 0.0), 1.0) * 255.0 + 0.5);
                };
                row[x] = cv::Vec3b(q(b[y * w + x]), q(g[y * w + x]), q(r[y * w + x]));
            }
        }
    }
    if (!cv::imwrite(path.string(), img)) throw Error("cannot write overlay: " + path.string());
}

}  // namespace colonformer
