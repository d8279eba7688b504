#include "diffcod/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "diffcod/errors.hpp"

namespace diffcod {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

bool is_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, 8) == 0;
}

Raster8 read_png(const std::filesystem::path& path, int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster8 r{static_cast<int>(image.height), static_cast<int>(image.width), channels, {}};
  r.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return r;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Raster8 read_jpeg(const std::filesystem::path& path, int channels) {
  auto file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Raster8 r;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  r.height = static_cast<int>(cinfo.output_height);
  r.width = static_cast<int>(cinfo.output_width);
  r.channels = channels;
  r.pixels.resize(static_cast<std::size_t>(r.height) * r.width * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = r.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * r.width *
                                         channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return r;
}

}  // namespace

Raster8 read_raster(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ShapeError("raster channels must be 1 or 3");
  if (!std::filesystem::is_regular_file(path)) throw IoError("missing file " + path.string());
  return is_png(path) ? read_png(path, channels) : read_jpeg(path, channels);
}

void write_png(const std::filesystem::path& path, const Raster8& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw ShapeError("PNG channels must be 1 or 3");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

Raster8 to_raster(const Tensor<float>& chw) {
  if (chw.ndim() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ShapeError("expected [1|3, H, W], got " + to_string(chw.shape()));
  }
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Raster8 r{h, w, c, std::vector<std::uint8_t>(chw.size())};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        const float v = std::clamp(chw[(static_cast<std::size_t>(k) * h + y) * w + x], 0.0f, 1.0f);
        r.pixels[(static_cast<std::size_t>(y) * w + x) * c + k] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return r;
}

Tensor<float> from_raster(const Raster8& r) {
  Tensor<float> out({r.channels, r.height, r.width});
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int k = 0; k < r.channels; ++k) {
        out[(static_cast<std::size_t>(k) * r.height + y) * r.width + x] =
            r.pixels[(static_cast<std::size_t>(y) * r.width + x) * r.channels + k] / 255.0f;
      }
    }
  }
  return out;
}

Tensor<float> read_image(const std::filesystem::path& path) {
  return from_raster(read_raster(path, 3));
}

Tensor<float> read_mask(const std::filesystem::path& path) {
  const auto r = read_raster(path, 1);
  Tensor<float> out({1, r.height, r.width});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r.pixels[i] >= 128 ? 1.0f : 0.0f;
  return out;
}

Tensor<float> read_gray(const std::filesystem::path& path) {
  return from_raster(read_raster(path, 1));
}

void write_image(const std::filesystem::path& path, const Tensor<float>& chw) {
  write_png(path, to_raster(chw));
}

}  // namespace diffcod
