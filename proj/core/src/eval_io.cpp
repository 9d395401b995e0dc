#include "vfift/eval_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include <png.h>

namespace fs = std::filesystem;

namespace vfift {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor from_rgb8(const std::vector<unsigned char>& rgb, int H, int W) {
    std::vector<double> data(static_cast<size_t>(3) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                data[(static_cast<size_t>(c) * H + y) * W + x] =
                    rgb[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
    return Tensor::from_data({3, H, W}, std::move(data));
}

std::vector<unsigned char> to_rgb8(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3) throw DimensionError("save_image: expected a [3,H,W] tensor");
    const int H = s[1], W = s[2];
    const auto& v = image.values();
    std::vector<unsigned char> rgb(static_cast<size_t>(3) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double val = std::clamp(v[(static_cast<size_t>(c) * H + y) * W + x], 0.0, 1.0);
                rgb[(static_cast<size_t>(y) * W + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(val * 255.0));
            }
    return rgb;
}

Tensor load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png reader setup failed: " + path);
    }
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt or truncated PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 W = png_get_image_width(png, info);
    const png_uint_32 H = png_get_image_height(png, info);
    // Normalize every variant down to plain 8-bit RGB.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<size_t>(W) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout: " + path);
    }
    pixels.resize(static_cast<size_t>(H) * W * 3);
    rows.resize(H);
    for (png_uint_32 y = 0; y < H; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * W * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_rgb8(pixels, static_cast<int>(H), static_cast<int>(W));
}

void save_png(const std::vector<unsigned char>& rgb, int H, int W, const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png writer setup failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(H);
    for (int y = 0; y < H; ++y)
        rows[y] = const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * W * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    auto next_token = [&]() -> std::string {
        std::string tok;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') { // comment to end of line
                while (in.get(ch) && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok += ch;
        }
        return tok;
    };
    if (next_token() != "P6") throw IoError("not a binary PPM (P6): " + path);
    int W = 0, H = 0, maxval = 0;
    try {
        W = std::stoi(next_token());
        H = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw IoError("malformed PPM header: " + path);
    }
    if (W <= 0 || H <= 0 || maxval != 255)
        throw IoError("unsupported PPM (need positive dims, maxval 255): " + path);
    std::vector<unsigned char> rgb(static_cast<size_t>(3) * H * W);
    in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(rgb.size()))
        throw IoError("truncated PPM payload: " + path);
    return from_rgb8(rgb, H, W);
}

void save_ppm(const std::vector<unsigned char>& rgb, int H, int W, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw IoError("short write on image: " + path);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

Tensor load_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open image: " + path);
    unsigned char magic[8] = {};
    probe.read(reinterpret_cast<char*>(magic), sizeof magic);
    probe.close();
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(magic, png_sig, 8) == 0) return load_png(path);
    if (magic[0] == 'P' && magic[1] == '6') return load_ppm(path);
    throw IoError("unsupported image format (need PNG or P6 PPM): " + path);
}

void save_image(const Tensor& image, const std::string& path) {
    const std::vector<unsigned char> rgb = to_rgb8(image);
    const int H = image.dim(1), W = image.dim(2);
    if (ends_with(path, ".ppm"))
        save_ppm(rgb, H, W, path);
    else
        save_png(rgb, H, W, path);
}

double psnr(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "psnr");
    const auto& av = a.values();
    const auto& bv = b.values();
    double mse = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        mse += d * d;
    }
    mse /= static_cast<double>(av.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kSsimRadius = 5; // 11x11 window
constexpr double kSsimSigma = 1.5;

// Index with reflect-101 padding (coordinate mirrors without repeating the
// border sample).
int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

std::array<double, 2 * kSsimRadius + 1> gaussian_kernel() {
    std::array<double, 2 * kSsimRadius + 1> k{};
    double total = 0.0;
    for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
        k[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
        total += k[i + kSsimRadius];
    }
    for (auto& v : k) v /= total;
    return k;
}

// Separable Gaussian blur of one H x W plane.
std::vector<double> blur(const std::vector<double>& src, int H, int W) {
    static const auto kernel = gaussian_kernel();
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int t = -kSsimRadius; t <= kSsimRadius; ++t)
                acc += kernel[t + kSsimRadius] * src[static_cast<size_t>(y) * W + reflect(x + t, W)];
            tmp[static_cast<size_t>(y) * W + x] = acc;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int t = -kSsimRadius; t <= kSsimRadius; ++t)
                acc += kernel[t + kSsimRadius] * tmp[static_cast<size_t>(reflect(y + t, H)) * W + x];
            out[static_cast<size_t>(y) * W + x] = acc;
        }
    return out;
}

double ssim_plane(const double* a, const double* b, int H, int W) {
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const size_t n = static_cast<size_t>(H) * W;
    std::vector<double> pa(a, a + n), pb(b, b + n), paa(n), pbb(n), pab(n);
    for (size_t i = 0; i < n; ++i) {
        paa[i] = a[i] * a[i];
        pbb[i] = b[i] * b[i];
        pab[i] = a[i] * b[i];
    }
    const auto mu_a = blur(pa, H, W);
    const auto mu_b = blur(pb, H, W);
    const auto m_aa = blur(paa, H, W);
    const auto m_bb = blur(pbb, H, W);
    const auto m_ab = blur(pab, H, W);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + C1) * (2 * cov + C2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
    }
    return total / static_cast<double>(n);
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "ssim");
    const Shape& s = a.shape();
    int planes, H, W;
    if (s.size() == 3) {
        planes = s[0];
        H = s[1];
        W = s[2];
    } else if (s.size() == 4) {
        planes = s[0] * s[1];
        H = s[2];
        W = s[3];
    } else {
        throw DimensionError("ssim: expected [C,H,W] or [N,C,H,W]");
    }
    const auto& av = a.values();
    const auto& bv = b.values();
    double total = 0.0;
    for (int p = 0; p < planes; ++p)
        total += ssim_plane(av.data() + static_cast<size_t>(p) * H * W,
                            bv.data() + static_cast<size_t>(p) * H * W, H, W);
    return total / planes;
}

ScanResult scan_triplets(const std::string& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("not a readable directory: " + root);
    std::vector<std::string> folders;
    for (const auto& entry : fs::directory_iterator(root, ec))
        if (entry.is_directory()) folders.push_back(entry.path().filename().string());
    if (ec) throw IoError("cannot scan: " + root + " (" + ec.message() + ")");
    std::sort(folders.begin(), folders.end());

    ScanResult result;
    for (const auto& name : folders) {
        std::array<std::string, 3> paths;
        bool complete = true;
        for (int i = 0; i < 3; ++i) {
            const fs::path base = fs::path(root) / name / ("im" + std::to_string(i + 1));
            if (fs::exists(base.string() + ".png"))
                paths[i] = base.string() + ".png";
            else if (fs::exists(base.string() + ".ppm"))
                paths[i] = base.string() + ".ppm";
            else
                complete = false;
        }
        if (complete)
            result.records.push_back({name, paths[0], paths[1], paths[2]});
        else
            ++result.skipped;
    }
    return result;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'F', 'I', 'F', 'T', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint: " + path);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t get_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated checkpoint: " + path);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ParamMap& params,
                     const std::string& config_text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& s = tensor.shape();
        put_u32(out, static_cast<uint32_t>(s.size()));
        for (int d : s) put_u64(out, static_cast<uint64_t>(d));
        for (double v : tensor.values()) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u64(out, bits);
        }
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw FormatError("not a checkpoint (bad magic): " + path);
    LoadedCheckpoint ckpt;
    ckpt.version = get_u32(in, path);
    if (ckpt.version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version) + ": " +
                          path);
    const uint32_t cfg_len = get_u32(in, path);
    ckpt.config_text.resize(cfg_len);
    if (cfg_len && !in.read(ckpt.config_text.data(), cfg_len))
        throw FormatError("truncated checkpoint: " + path);
    const uint32_t entries = get_u32(in, path);
    for (uint32_t e = 0; e < entries; ++e) {
        const uint32_t name_len = get_u32(in, path);
        std::string name(name_len, '\0');
        if (name_len && !in.read(name.data(), name_len))
            throw FormatError("truncated checkpoint: " + path);
        const uint32_t rank = get_u32(in, path);
        Shape shape(rank);
        int64_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint64_t dim = get_u64(in, path);
            if (dim == 0 || dim > (1u << 30)) throw FormatError("absurd dimension in: " + path);
            shape[d] = static_cast<int>(dim);
            count *= shape[d];
        }
        std::vector<double> data(static_cast<size_t>(count));
        for (auto& v : data) {
            const uint64_t bits = get_u64(in, path);
            std::memcpy(&v, &bits, sizeof v);
        }
        if (!ckpt.tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data))).second)
            throw FormatError("duplicate entry '" + name + "' in: " + path);
    }
    return ckpt;
}

void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamMap& params) {
    for (auto& [name, p] : params) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw ConfigError("checkpoint incompatible: missing entry '" + name + "'");
        if (it->second.shape() != p.shape())
            throw ConfigError("checkpoint incompatible: shape mismatch on '" + name + "'");
    }
    for (auto& [name, p] : params) p.mutable_values() = ckpt.tensors.at(name).values();
}

} // namespace vfift
