#include "blindrest/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "blindrest/errors.hpp"

namespace blindrest {

Image::Image(std::size_t h, std::size_t w, std::size_t c, float fill) : height(h), width(w), channels(c) {
  if (h == 0 || w == 0) throw ContractError("image dimensions must be at least 1x1");
  if (c != 1 && c != 3) throw ContractError("image must have 1 or 3 channels, got " + std::to_string(c));
  pixels.assign(h * w * c, fill);
}

void Image::clamp() {
  for (auto& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
}

void require_same_dims(const Image& a, const Image& b, const char* what) {
  auto fail = [&](const char* axis, std::size_t x, std::size_t y) {
    throw DimensionError(std::string(what) + ": " + axis + " mismatch (" + std::to_string(x) + " vs " +
                         std::to_string(y) + ")");
  };
  if (a.height != b.height) fail("height", a.height, b.height);
  if (a.width != b.width) fail("width", a.width, b.width);
  if (a.channels != b.channels) fail("channels", a.channels, b.channels);
}

Image to_luma(const Image& rgb) {
  if (rgb.channels == 1) return rgb;
  Image out(rgb.height, rgb.width, 1);
  for (std::size_t i = 0; i < rgb.height * rgb.width; ++i) {
    const float* p = &rgb.pixels[i * 3];
    out.pixels[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  }
  return out;
}

namespace {
std::uint8_t to_byte(float p) { return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)); }
}  // namespace

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& p : out.pixels) p = static_cast<float>(to_byte(p)) / 255.0f;
  return out;
}

Tensor to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ContractError("to_tensor: empty batch");
  const auto& f = images.front();
  const std::size_t C = f.channels, H = f.height, W = f.width;
  std::vector<float> data(images.size() * C * H * W);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_dims(images[n], f, "to_tensor");
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) data[((n * C + c) * H + y) * W + x] = images[n].at(y, x, c);
  }
  return Tensor({images.size(), C, H, W}, std::move(data));
}

Tensor to_tensor(const Image& image) { return to_tensor(std::vector<Image>{image}); }

std::vector<Image> from_tensor(const Tensor& t) {
  if (t.ndim() != 4) throw DimensionError("from_tensor: expected [N,C,H,W], got " + shape_str(t.shape()));
  const std::size_t N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
  std::vector<Image> out;
  out.reserve(N);
  const auto d = t.data();
  for (std::size_t n = 0; n < N; ++n) {
    Image img(H, W, C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) img.at(y, x, c) = d[((n * C + c) * H + y) * W + x];
    img.clamp();
    out.push_back(std::move(img));
  }
  return out;
}

namespace {

std::string sniff_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 8> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 8 && png_sig_cmp(magic.data(), 0, 8) == 0) return "png";
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return "jpeg";
  if (got >= 2 && magic[0] == 'B' && magic[1] == 'M') return "bmp";
  if (got >= 4 && std::memcmp(magic.data(), "GIF8", 4) == 0) return "gif";
  if (got >= 4 && std::memcmp(magic.data(), "RIFF", 4) == 0) return "riff/webp";
  if (got >= 2 && magic[0] == 'P' && magic[1] >= '1' && magic[1] <= '6') return "pnm";
  return "unknown";
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const auto format = sniff_format(path);
  if (format != "png") throw FormatError("unsupported image format '" + format + "' in " + path.string());

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read " + path.string() + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode " + path.string() + ": " + msg);
  }
  Image img(png.height, png.width, gray ? 1 : 3);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("save_image: need 1 or 3 channels");
  std::vector<std::uint8_t> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(image.pixels[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + png.message);
  }
}

}  // namespace blindrest
