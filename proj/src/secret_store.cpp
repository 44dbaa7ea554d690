#include "gridauth/secret_store.hpp"

#include <sodium.h>

#include "gridauth/fsutil.hpp"
#include "gridauth/rng.hpp"

namespace gridauth {

std::string SecretStore::generate_master_key_hex() {
    return to_hex(random_bytes(crypto_secretbox_KEYBYTES));
}

Expected<SecretStore> SecretStore::open(const std::string &path,
                                        const std::string &master_key_hex) {
    SecretStore store;
    store.path_ = path;
    store.key_ = from_hex(master_key_hex);
    if (store.key_.size() != crypto_secretbox_KEYBYTES) {
        return Error{"bad_master_key", "master key must be 32 bytes of hex"};
    }

    auto raw = read_file(path);
    if (raw.has_value()) {
        if (raw->size() < crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES) {
            return Error{"corrupt_store", "sealed file too short"};
        }
        const auto *bytes = reinterpret_cast<const unsigned char *>(raw->data());
        size_t clen = raw->size() - crypto_secretbox_NONCEBYTES;
        std::vector<unsigned char> plain(clen - crypto_secretbox_MACBYTES);
        if (crypto_secretbox_open_easy(plain.data(), bytes + crypto_secretbox_NONCEBYTES, clen,
                                       bytes, store.key_.data()) != 0) {
            return Error{"bad_master_key", "cannot unseal secret store"};
        }
        auto parsed =
            nlohmann::json::parse(plain.begin(), plain.end(), nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) {
            return Error{"corrupt_store", "unsealed content is not a JSON object"};
        }
        store.data_ = parsed;
    }
    return store;
}

Status SecretStore::persist() {
    std::string plain = data_.dump();
    auto nonce = random_bytes(crypto_secretbox_NONCEBYTES);
    std::vector<unsigned char> cipher(plain.size() + crypto_secretbox_MACBYTES);
    crypto_secretbox_easy(cipher.data(),
                          reinterpret_cast<const unsigned char *>(plain.data()), plain.size(),
                          nonce.data(), key_.data());
    std::string blob(reinterpret_cast<const char *>(nonce.data()), nonce.size());
    blob.append(reinterpret_cast<const char *>(cipher.data()), cipher.size());
    return write_file_atomic(path_, blob);
}

Status SecretStore::put(const std::string &key, const nlohmann::json &value) {
    data_[key] = value;
    return persist();
}

std::optional<nlohmann::json> SecretStore::get(const std::string &key) const {
    auto it = data_.find(key);
    if (it == data_.end()) return std::nullopt;
    return *it;
}

Status SecretStore::erase(const std::string &key) {
    data_.erase(key);
    return persist();
}

std::vector<std::string> SecretStore::keys() const {
    std::vector<std::string> out;
    for (auto it = data_.begin(); it != data_.end(); ++it) out.push_back(it.key());
    return out;
}

size_t SecretStore::size() const {
    return data_.size();
}

} // namespace gridauth
