#include "lims/codec.hpp"

#include <sodium.h>

#include <sstream>
#include <vector>

namespace lims {

namespace {

constexpr std::size_t kChunk = 64 * 1024;

void init_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw CodecError("libsodium failed to initialise");
}

/// Reads up to n bytes; returns how many were read.
std::size_t read_up_to(std::istream& in, unsigned char* buf, std::size_t n) {
  in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

}  // namespace

std::string BackupCodec::encode(const std::string& plain) const {
  std::istringstream in(plain);
  std::ostringstream out;
  encode(in, out);
  return out.str();
}

std::string BackupCodec::decode(const std::string& sealed) const {
  std::istringstream in(sealed);
  std::ostringstream out;
  decode(in, out);
  return out.str();
}

void IdentityCodec::encode(std::istream& in, std::ostream& out) const { out << in.rdbuf(); }
void IdentityCodec::decode(std::istream& in, std::ostream& out) const { out << in.rdbuf(); }

SecretStreamCodec::SecretStreamCodec(const std::array<unsigned char, kKeyBytes>& key) : key_(key) {
  static_assert(kKeyBytes == crypto_secretstream_xchacha20poly1305_KEYBYTES);
  init_sodium();
}

std::unique_ptr<SecretStreamCodec> SecretStreamCodec::from_hex(const std::string& hex) {
  std::array<unsigned char, kKeyBytes> key{};
  std::size_t len = 0;
  if (hex.size() != 2 * kKeyBytes ||
      sodium_hex2bin(key.data(), key.size(), hex.data(), hex.size(), nullptr, &len, nullptr) != 0 ||
      len != kKeyBytes)
    throw CodecError("encryption key must be 64 hex digits");
  return std::make_unique<SecretStreamCodec>(key);
}

void SecretStreamCodec::encode(std::istream& in, std::ostream& out) const {
  crypto_secretstream_xchacha20poly1305_state st;
  unsigned char header[crypto_secretstream_xchacha20poly1305_HEADERBYTES];
  crypto_secretstream_xchacha20poly1305_init_push(&st, header, key_.data());
  out.write(reinterpret_cast<const char*>(header), sizeof header);

  std::vector<unsigned char> cur(kChunk), next(kChunk), sealed(kChunk + crypto_secretstream_xchacha20poly1305_ABYTES);
  std::size_t n = read_up_to(in, cur.data(), kChunk);
  for (;;) {
    // Look ahead so the final chunk (possibly empty) carries TAG_FINAL.
    std::size_t m = n == kChunk ? read_up_to(in, next.data(), kChunk) : 0;
    bool last = m == 0;
    unsigned long long clen = 0;
    crypto_secretstream_xchacha20poly1305_push(
        &st, sealed.data(), &clen, cur.data(), n, nullptr, 0,
        last ? crypto_secretstream_xchacha20poly1305_TAG_FINAL : crypto_secretstream_xchacha20poly1305_TAG_MESSAGE);
    out.write(reinterpret_cast<const char*>(sealed.data()), static_cast<std::streamsize>(clen));
    if (last) break;
    std::swap(cur, next);
    n = m;
  }
  if (!out) throw CodecError("write failed while encrypting");
}

void SecretStreamCodec::decode(std::istream& in, std::ostream& out) const {
  crypto_secretstream_xchacha20poly1305_state st;
  unsigned char header[crypto_secretstream_xchacha20poly1305_HEADERBYTES];
  if (read_up_to(in, header, sizeof header) != sizeof header) throw CodecError("sealed backup is truncated");
  if (crypto_secretstream_xchacha20poly1305_init_pull(&st, header, key_.data()) != 0)
    throw CodecError("sealed backup has an invalid header");

  std::vector<unsigned char> sealed(kChunk + crypto_secretstream_xchacha20poly1305_ABYTES), plain(kChunk);
  for (;;) {
    std::size_t n = read_up_to(in, sealed.data(), sealed.size());
    if (n < crypto_secretstream_xchacha20poly1305_ABYTES) throw CodecError("sealed backup is truncated");
    unsigned long long plen = 0;
    unsigned char tag = 0;
    if (crypto_secretstream_xchacha20poly1305_pull(&st, plain.data(), &plen, &tag, sealed.data(), n, nullptr, 0) != 0)
      throw CodecError("sealed backup failed authentication");
    out.write(reinterpret_cast<const char*>(plain.data()), static_cast<std::streamsize>(plen));
    if (tag == crypto_secretstream_xchacha20poly1305_TAG_FINAL) {
      if (in.peek() != std::char_traits<char>::eof()) throw CodecError("trailing bytes after sealed backup");
      break;
    }
    if (n < sealed.size()) throw CodecError("sealed backup is truncated");
  }
}

}  // namespace lims
