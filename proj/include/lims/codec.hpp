#pragma once

// Pluggable transform applied to backup copies. The identity codec stores
// plaintext; the secretstream codec (XChaCha20-Poly1305, libsodium) encrypts
// in 64 KiB authenticated chunks.

#include <array>
#include <istream>
#include <memory>
#include <ostream>
#include <string>

#include "lims/util.hpp"

namespace lims {

class CodecError : public Error {
 public:
  using Error::Error;
};

class BackupCodec {
 public:
  virtual ~BackupCodec() = default;
  virtual std::string name() const = 0;
  virtual void encode(std::istream& in, std::ostream& out) const = 0;
  /// Throws CodecError when the input is truncated or tampered with.
  virtual void decode(std::istream& in, std::ostream& out) const = 0;

  std::string encode(const std::string& plain) const;
  std::string decode(const std::string& sealed) const;
};

class IdentityCodec : public BackupCodec {
 public:
  std::string name() const override { return "identity"; }
  void encode(std::istream& in, std::ostream& out) const override;
  void decode(std::istream& in, std::ostream& out) const override;
  using BackupCodec::decode;
  using BackupCodec::encode;
};

class SecretStreamCodec : public BackupCodec {
 public:
  static constexpr std::size_t kKeyBytes = 32;

  explicit SecretStreamCodec(const std::array<unsigned char, kKeyBytes>& key);
  /// 64 hex digits.
  static std::unique_ptr<SecretStreamCodec> from_hex(const std::string& hex);

  std::string name() const override { return "secretstream"; }
  void encode(std::istream& in, std::ostream& out) const override;
  void decode(std::istream& in, std::ostream& out) const override;
  using BackupCodec::decode;
  using BackupCodec::encode;

 private:
  std::array<unsigned char, kKeyBytes> key_;
};

}  // namespace lims
