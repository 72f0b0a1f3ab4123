#include "diffender/png_io.hpp"

#include "diffender/errors.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace diffender {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError("not a PNG: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_byte> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    const int C = png_get_channels(png, info);
    buf.resize(static_cast<std::size_t>(W) * H * C);
    rows.resize(H);
    for (int y = 0; y < H; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * W * C;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    if (C != 1 && C != 3) throw IoError("unsupported PNG channel count in " + path.string());

    Image img(H, W, C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) img(c, y, x) = rows[y][x * C + c] / 255.0;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    validate_image(img);
    const int H = img.height(), W = img.width(), C = img.channels();
    std::vector<png_byte> buf(static_cast<std::size_t>(W) * H * C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                buf[(static_cast<std::size_t>(y) * W + x) * C + c] =
                    static_cast<png_byte>(std::lround(255.0 * img(c, y, x)));

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> rows(H);
    for (int y = 0; y < H; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * W * C;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, W, H, 8, C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image mask_to_image(const BinaryMask& m) {
    Image img(m.height(), m.width(), 1);
    for (std::size_t i = 0; i < m.size(); ++i) img[i] = m[i] ? 1.0 : 0.0;
    return img;
}

Image heatmap(const SoftMask& m) {
    double lo = 0.0, hi = 0.0;
    if (m.size()) {
        lo = *std::min_element(m.values().begin(), m.values().end());
        hi = *std::max_element(m.values().begin(), m.values().end());
    }
    Image img(m.height(), m.width(), 3);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            const double v = hi > lo ? (m(y, x) - lo) / (hi - lo) : 0.0;
            img(0, y, x) = std::clamp(3.0 * v, 0.0, 1.0);
            img(1, y, x) = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
            img(2, y, x) = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
        }
    return img;
}

Image hstack(const std::vector<Image>& images, int gap) {
    if (images.empty()) return {};
    const int H = images.front().height();
    int W = 0;
    for (const auto& im : images) {
        if (im.height() != H) throw ShapeError("hstack needs equal heights");
        W += im.width();
    }
    W += gap * static_cast<int>(images.size() - 1);
    Image out(H, W, 3, 1.0);
    int x0 = 0;
    for (const auto& im : images) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < im.width(); ++x) out(c, y, x0 + x) = im(im.channels() == 3 ? c : 0, y, x);
        x0 += im.width() + gap;
    }
    return out;
}

Image upscale(const Image& img, int factor) {
    if (factor < 1) throw ParamError("upscale factor must be positive");
    Image out(img.height() * factor, img.width() * factor, img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) out(c, y, x) = img(c, y / factor, x / factor);
    return out;
}

}  // namespace diffender
