#include "hearx/pipeline/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "json.hpp"

namespace hearx::pipeline {

namespace {

constexpr std::uint16_t kPcm = 1, kFloat = 3, kExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::io_error, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Wav read_wav(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  const auto* d = reinterpret_cast<const unsigned char*>(raw.data());
  const std::string name = "wav '" + path.string() + "': ";
  require(raw.size() >= 12 && std::memcmp(d, "RIFF", 4) == 0 && std::memcmp(d + 8, "WAVE", 4) == 0,
          Errc::format_error, name + "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_size = 0;
  for (size_t pos = 12; pos + 8 <= raw.size();) {
    const std::uint32_t size = le32(d + pos + 4);
    const unsigned char* body = d + pos + 8;
    const size_t available = raw.size() - pos - 8;
    if (std::memcmp(d + pos, "fmt ", 4) == 0) {
      require(size >= 16 && size <= available, Errc::format_error, name + "bad fmt chunk");
      format = le16(body);
      channels = le16(body + 2);
      rate = le32(body + 4);
      bits = le16(body + 14);
      if (format == kExtensible) {
        require(size >= 40, Errc::format_error, name + "bad extensible fmt chunk");
        format = le16(body + 24);
      }
    } else if (std::memcmp(d + pos, "data", 4) == 0) {
      data = body;
      data_size = std::min<size_t>(size, available);
      break;
    }
    pos += 8 + size + (size & 1);
  }
  require(format != 0, Errc::format_error, name + "missing fmt chunk");
  require(data != nullptr, Errc::format_error, name + "missing data chunk");
  require(channels >= 1, Errc::format_error, name + "zero channels");
  const bool pcm16 = format == kPcm && bits == 16, f32 = format == kFloat && bits == 32;
  require(pcm16 || f32, Errc::format_error, name + "only 16-bit PCM and 32-bit float are supported");

  const size_t width = bits / 8, frames = data_size / (width * channels);
  Wav wav;
  wav.sample_rate = rate;
  wav.samples.resize(static_cast<Eigen::Index>(frames), channels);
  for (size_t i = 0; i < frames; ++i)
    for (std::uint16_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      const double v = pcm16 ? static_cast<std::int16_t>(le16(p)) / 32768.0 : std::bit_cast<float>(le32(p));
      require(std::isfinite(v), Errc::format_error, name + "non-finite sample");
      wav.samples(static_cast<Eigen::Index>(i), c) = v;
    }
  return wav;
}

void write_wav(const std::filesystem::path& path, const Wav& wav, SampleFormat format) {
  const auto channels = static_cast<std::uint16_t>(wav.samples.cols());
  require(channels >= 1, Errc::invalid_input, "write_wav: no channels");
  require(wav.samples.allFinite(), Errc::invalid_input, "write_wav: non-finite samples");
  const std::uint16_t bits = format == SampleFormat::int16 ? 16 : 32;
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  const std::uint32_t data_size = static_cast<std::uint32_t>(wav.samples.size()) * (bits / 8);

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put32(out, 36 + data_size);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, format == SampleFormat::int16 ? kPcm : kFloat);
  put16(out, channels);
  put32(out, rate);
  put32(out, rate * channels * (bits / 8));
  put16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  put16(out, bits);
  out += "data";
  put32(out, data_size);
  for (Eigen::Index i = 0; i < wav.samples.rows(); ++i)
    for (Eigen::Index c = 0; c < wav.samples.cols(); ++c) {
      const double v = wav.samples(i, c);
      if (format == SampleFormat::int16) {
        const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }

  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io_error, "cannot open '" + path.string() + "' for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) fail(Errc::io_error, "write to '" + path.string() + "' failed");
}

Listener parse_listener(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Errc::invalid_audiogram, std::string("listener: ") + e.what());
  }
  auto numbers = [&](const char* key) {
    require(j.is_object() && j.contains(key) && j[key].is_array(), Errc::invalid_audiogram,
            std::string("listener: missing array '") + key + "'");
    std::vector<double> v;
    for (const auto& x : j[key]) {
      require(x.is_number(), Errc::invalid_audiogram, std::string("listener: '") + key + "' must hold numbers");
      v.push_back(x.get<double>());
    }
    return v;
  };
  Listener l;
  const auto cfs = numbers("audiogram_cfs");
  l.left = {cfs, numbers("audiogram_levels_l")};
  l.right = {cfs, numbers("audiogram_levels_r")};
  l.left.validate();
  l.right.validate();
  return l;
}

Listener read_listener(const std::filesystem::path& path) { return parse_listener(read_text(path)); }

}  // namespace hearx::pipeline
