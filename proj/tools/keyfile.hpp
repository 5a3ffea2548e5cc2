#pragma once

// Client-side key files written by `lorahe keygen`.
//   secret.key : "LHSK", u32 version, u32 N, N key bits packed LSB first
//   ksk.bin    : one KskUpload frame, exactly as sent to a server

#include <filesystem>

#include "lorahe/wire.hpp"

namespace lorahe::cli {

inline constexpr const char* kSecretKeyFile = "secret.key";
inline constexpr const char* kKskFile = "ksk.bin";

void write_secret_key(const SecretKey& sk, const std::filesystem::path& path);
SecretKey read_secret_key(const std::filesystem::path& path);

void write_ksk(const KeySwitchKey& ksk, const std::filesystem::path& path);
KeySwitchKey read_ksk(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace lorahe::cli
