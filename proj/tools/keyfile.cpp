#include "keyfile.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

namespace lorahe::cli {

namespace {

constexpr char kMagic[4] = {'L', 'H', 'S', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(Bytes& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> in) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_secret_key(const SecretKey& sk, const std::filesystem::path& path) {
  Bytes out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(sk.degree()));
  const std::vector<uint64_t> bits(sk.bits().begin(), sk.bits().end());
  const Bytes packed = pack_bits(bits, 1);
  out.insert(out.end(), packed.begin(), packed.end());
  write_file(path, out);
}

SecretKey read_secret_key(const std::filesystem::path& path) {
  const Bytes in = read_file(path);
  if (in.size() < 12 || !std::equal(kMagic, kMagic + 4, in.begin())) {
    throw std::runtime_error(path.string() + " is not a secret key file");
  }
  if (get_u32(std::span(in).subspan(4)) != kVersion) throw std::runtime_error("unsupported secret key version");
  const uint32_t n = get_u32(std::span(in).subspan(8));
  const auto body = std::span(in).subspan(12);
  if (body.size() != packed_size(n, 1)) throw std::runtime_error("secret key file has the wrong length");
  const auto bits = unpack_bits(body, n, 1);
  return SecretKey(std::vector<uint8_t>(bits.begin(), bits.end()));
}

void write_ksk(const KeySwitchKey& ksk, const std::filesystem::path& path) {
  write_file(path, encode_frame(make_frame(make_ksk_upload(ksk), ksk.params())));
}

KeySwitchKey read_ksk(const std::filesystem::path& path) {
  KskUpload up = parse_ksk(decode_frame(read_file(path)));
  return KeySwitchKey(up.params, std::move(up.seeds), std::move(up.body));
}

}  // namespace lorahe::cli
