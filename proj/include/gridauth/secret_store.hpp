#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/expected.hpp"

namespace gridauth {

// Encrypted-at-rest key-value store. The whole map is serialized as JSON and
// sealed with XSalsa20-Poly1305 under a 32-byte master key supplied at
// startup; the file layout is nonce || ciphertext. Mutations persist
// immediately via atomic rename. Not internally synchronized: the owning
// service serializes access under its own lock.
class SecretStore {
  public:
    // Opens (or creates) the store. master_key_hex must decode to 32 bytes.
    static Expected<SecretStore> open(const std::string &path, const std::string &master_key_hex);

    static std::string generate_master_key_hex();

    Status put(const std::string &key, const nlohmann::json &value);
    std::optional<nlohmann::json> get(const std::string &key) const;
    Status erase(const std::string &key);
    std::vector<std::string> keys() const;
    size_t size() const;

  private:
    SecretStore() = default;
    Status persist();

    std::string path_;
    std::vector<uint8_t> key_;
    nlohmann::json data_ = nlohmann::json::object();
};

} // namespace gridauth
