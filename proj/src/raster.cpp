#include "shanshui/raster.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

// jpeglib.h needs size_t and FILE declared first.
#include <jpeglib.h>

#include "shanshui/errors.hpp"

namespace shanshui {

Raster::Raster(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      data(static_cast<std::size_t>(w) * h * c, fill) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) {
    throw DomainError("raster needs width, height >= 1 and 1 or 3 channels");
  }
}

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 &&
         bytes[2] == 0xFF;
}

std::uint8_t over_white(std::uint8_t value, std::uint8_t alpha) {
  // value * a/255 + 255 * (1 - a/255), rounded.
  const int v = value * alpha + 255 * (255 - alpha);
  return static_cast<std::uint8_t>((v + 127) / 255);
}

Raster decode_png_impl(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png decode failed: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGBA : PNG_FORMAT_GA;
  const int in_channels = color ? 4 : 2;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("png decode failed: " + msg);
  }
  const int out_channels = color ? 3 : 1;
  Raster out(static_cast<int>(image.width), static_cast<int>(image.height),
             out_channels);
  const std::size_t pixels = static_cast<std::size_t>(out.width) * out.height;
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint8_t* src = &buffer[p * in_channels];
    const std::uint8_t alpha = src[in_channels - 1];
    for (int c = 0; c < out_channels; ++c) {
      out.data[p * out_channels + c] = over_white(src[c], alpha);
    }
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

Raster decode_jpeg_impl(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silence;
  // Locals touched after setjmp live in storage that longjmp cannot clobber.
  std::vector<std::uint8_t> pixels;
  int width = 0;
  int height = 0;
  int channels = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space =
      cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  channels = cinfo.output_components;
  pixels.resize(static_cast<std::size_t>(width) * height * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &pixels[static_cast<std::size_t>(cinfo.output_scanline) *
                           width * channels];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Raster out;
  out.width = width;
  out.height = height;
  out.channels = channels;
  out.data = std::move(pixels);
  return out;
}

}  // namespace

Raster decode_png(std::span<const std::uint8_t> bytes) {
  if (!is_png(bytes)) throw FormatError("not a PNG image");
  return decode_png_impl(bytes);
}

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png_impl(bytes);
  if (is_jpeg(bytes)) return decode_jpeg_impl(bytes);
  throw FormatError("unsupported image format (expected PNG or JPEG)");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Raster load_raster(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Raster& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data.data(), 0,
                                 nullptr)) {
    throw FormatError(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(),
                                 0, nullptr)) {
    throw FormatError(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const Raster& img) {
  write_file(path, encode_png(img));
}

Raster resize(const Raster& img, int width, int height) {
  if (width < 1 || height < 1) throw DomainError("resize target must be >= 1");
  if (width == img.width && height == img.height) return img;
  Raster out(width, height, img.channels);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bottom =
            img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        const double v = top * (1 - wy) + bottom * wy;
        out.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

Raster resize(const Raster& img, int target) { return resize(img, target, target); }

Raster to_rgb(const Raster& img) {
  if (img.channels == 3) return img;
  Raster out(img.width, img.height, 3);
  for (std::size_t p = 0; p < img.data.size(); ++p) {
    out.data[3 * p] = out.data[3 * p + 1] = out.data[3 * p + 2] = img.data[p];
  }
  return out;
}

Raster hconcat(std::span<const Raster> parts) {
  if (parts.empty()) throw DomainError("hconcat needs at least one image");
  int width = 0;
  for (const auto& p : parts) {
    if (p.height != parts[0].height || p.channels != parts[0].channels) {
      throw ShapeError("hconcat parts must share height and channels");
    }
    width += p.width;
  }
  Raster out(width, parts[0].height, parts[0].channels);
  int x_offset = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < p.height; ++y) {
      std::copy_n(&p.data[static_cast<std::size_t>(y) * p.width * p.channels],
                  p.width * p.channels,
                  &out.data[(static_cast<std::size_t>(y) * width + x_offset) *
                            out.channels]);
    }
    x_offset += p.width;
  }
  return out;
}

}  // namespace shanshui
