#include "gridauth/keys.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ecdsa.h>
#include <openssl/err.h>
#include <openssl/param_build.h>
#include <openssl/rsa.h>

#include "gridauth/b64url.hpp"

namespace gridauth {

namespace {

std::string ssl_error() {
    char buf[256];
    ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
    return buf;
}

EvpPkeyPtr wrap(EVP_PKEY *p) { return EvpPkeyPtr(p, EVP_PKEY_free); }

struct BnFree {
    void operator()(BIGNUM *b) const { BN_free(b); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnFree>;

std::string bn_to_b64url(const BIGNUM *bn) {
    std::vector<uint8_t> buf(static_cast<size_t>(BN_num_bytes(bn)));
    BN_bn2bin(bn, buf.data());
    return b64url_encode(buf);
}

Expected<Jwk> ec_public_jwk(const std::string &kid, EVP_PKEY *key) {
    // Read the affine coordinates directly; the octet-string form depends on
    // the key's point-conversion format, the coordinates do not.
    BIGNUM *x = nullptr;
    BIGNUM *y = nullptr;
    if (EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_EC_PUB_X, &x) != 1 ||
        EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_EC_PUB_Y, &y) != 1) {
        BN_free(x);
        return Error{"key_error", "EC public point: " + ssl_error()};
    }
    BnPtr xp(x), yp(y);
    std::vector<uint8_t> xb(32), yb(32);
    if (BN_bn2binpad(x, xb.data(), 32) != 32 || BN_bn2binpad(y, yb.data(), 32) != 32) {
        return Error{"key_error", "unexpected EC coordinate width"};
    }
    Jwk jwk;
    jwk.kid = kid;
    jwk.alg = "ES256";
    jwk.kty = "EC";
    jwk.params["crv"] = "P-256";
    jwk.params["x"] = b64url_encode(xb);
    jwk.params["y"] = b64url_encode(yb);
    return jwk;
}

Expected<Jwk> rsa_public_jwk(const std::string &kid, EVP_PKEY *key) {
    BIGNUM *n = nullptr;
    BIGNUM *e = nullptr;
    if (EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_RSA_N, &n) != 1 ||
        EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_RSA_E, &e) != 1) {
        BN_free(n);
        return Error{"key_error", "RSA public params: " + ssl_error()};
    }
    BnPtr np(n), ep(e);
    Jwk jwk;
    jwk.kid = kid;
    jwk.alg = "RS256";
    jwk.kty = "RSA";
    jwk.params["n"] = bn_to_b64url(n);
    jwk.params["e"] = bn_to_b64url(e);
    return jwk;
}

Expected<EvpPkeyPtr> ec_key_from_params(const nlohmann::json &params) {
    auto x = b64url_decode(params.value("x", ""));
    auto y = b64url_decode(params.value("y", ""));
    if (!x || !y || x->size() != 32 || y->size() != 32) {
        return Error{"key_error", "bad EC jwk coordinates"};
    }
    std::vector<uint8_t> pt;
    pt.reserve(65);
    pt.push_back(0x04);
    pt.insert(pt.end(), x->begin(), x->end());
    pt.insert(pt.end(), y->begin(), y->end());

    char group[] = "P-256";
    OSSL_PARAM ossl_params[3];
    ossl_params[0] = OSSL_PARAM_construct_utf8_string(OSSL_PKEY_PARAM_GROUP_NAME, group, 0);
    ossl_params[1] = OSSL_PARAM_construct_octet_string(OSSL_PKEY_PARAM_PUB_KEY, pt.data(), pt.size());
    ossl_params[2] = OSSL_PARAM_construct_end();

    std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)> ctx(
        EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr), EVP_PKEY_CTX_free);
    EVP_PKEY *out = nullptr;
    if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) != 1 ||
        EVP_PKEY_fromdata(ctx.get(), &out, EVP_PKEY_PUBLIC_KEY, ossl_params) != 1) {
        return Error{"key_error", "EC jwk import: " + ssl_error()};
    }
    return wrap(out);
}

Expected<EvpPkeyPtr> rsa_key_from_params(const nlohmann::json &params) {
    auto nb = b64url_decode(params.value("n", ""));
    auto eb = b64url_decode(params.value("e", ""));
    if (!nb || !eb || nb->empty() || eb->empty()) {
        return Error{"key_error", "bad RSA jwk parameters"};
    }
    BnPtr n(BN_bin2bn(nb->data(), static_cast<int>(nb->size()), nullptr));
    BnPtr e(BN_bin2bn(eb->data(), static_cast<int>(eb->size()), nullptr));
    if (!n || !e) return Error{"key_error", "RSA bignum import"};

    std::unique_ptr<OSSL_PARAM_BLD, decltype(&OSSL_PARAM_BLD_free)> bld(OSSL_PARAM_BLD_new(),
                                                                        OSSL_PARAM_BLD_free);
    if (!bld || OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_N, n.get()) != 1 ||
        OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_E, e.get()) != 1) {
        return Error{"key_error", "RSA param build"};
    }
    std::unique_ptr<OSSL_PARAM, decltype(&OSSL_PARAM_free)> ossl_params(
        OSSL_PARAM_BLD_to_param(bld.get()), OSSL_PARAM_free);

    std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)> ctx(
        EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr), EVP_PKEY_CTX_free);
    EVP_PKEY *out = nullptr;
    if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) != 1 ||
        EVP_PKEY_fromdata(ctx.get(), &out, EVP_PKEY_PUBLIC_KEY, ossl_params.get()) != 1) {
        return Error{"key_error", "RSA jwk import: " + ssl_error()};
    }
    return wrap(out);
}

// ECDSA DER <-> raw r||s (64 bytes for P-256).
Expected<std::vector<uint8_t>> ecdsa_der_to_raw(const std::vector<uint8_t> &der) {
    const unsigned char *p = der.data();
    ECDSA_SIG *sig = d2i_ECDSA_SIG(nullptr, &p, static_cast<long>(der.size()));
    if (!sig) return Error{"key_error", "ECDSA DER decode"};
    const BIGNUM *r = nullptr;
    const BIGNUM *s = nullptr;
    ECDSA_SIG_get0(sig, &r, &s);
    std::vector<uint8_t> raw(64);
    int ok = BN_bn2binpad(r, raw.data(), 32) == 32 && BN_bn2binpad(s, raw.data() + 32, 32) == 32;
    ECDSA_SIG_free(sig);
    if (!ok) return Error{"key_error", "ECDSA component size"};
    return raw;
}

Expected<std::vector<uint8_t>> ecdsa_raw_to_der(const std::vector<uint8_t> &raw) {
    if (raw.size() != 64) return Error{"key_error", "ECDSA raw signature must be 64 bytes"};
    ECDSA_SIG *sig = ECDSA_SIG_new();
    BIGNUM *r = BN_bin2bn(raw.data(), 32, nullptr);
    BIGNUM *s = BN_bin2bn(raw.data() + 32, 32, nullptr);
    if (!sig || !r || !s || ECDSA_SIG_set0(sig, r, s) != 1) {
        ECDSA_SIG_free(sig);
        return Error{"key_error", "ECDSA signature build"};
    }
    int len = i2d_ECDSA_SIG(sig, nullptr);
    std::vector<uint8_t> der(static_cast<size_t>(len));
    unsigned char *p = der.data();
    i2d_ECDSA_SIG(sig, &p);
    ECDSA_SIG_free(sig);
    return der;
}

} // namespace

Expected<SigningKey> SigningKey::generate(const std::string &kid, const std::string &alg) {
    EVP_PKEY *pkey = nullptr;
    if (alg == "ES256") {
        pkey = EVP_EC_gen("P-256");
    } else if (alg == "RS256") {
        pkey = EVP_RSA_gen(2048);
    } else {
        return Error{"key_error", "unsupported signing algorithm: " + alg};
    }
    if (!pkey) return Error{"key_error", "keygen: " + ssl_error()};
    return SigningKey{kid, alg, wrap(pkey)};
}

Expected<Jwk> SigningKey::public_jwk() const {
    auto jwk = alg == "ES256" ? ec_public_jwk(kid, key.get()) : rsa_public_jwk(kid, key.get());
    if (!jwk.ok()) return jwk;
    // Re-import from public params so the Jwk holds no private material.
    auto pub = jwk.value().kty == "EC" ? ec_key_from_params(jwk.value().params)
                                       : rsa_key_from_params(jwk.value().params);
    if (!pub.ok()) return pub.error();
    jwk.value().key = pub.value();
    return jwk;
}

nlohmann::json Jwk::to_json() const {
    nlohmann::json j = params;
    j["kid"] = kid;
    j["kty"] = kty;
    j["alg"] = alg;
    j["use"] = "sig";
    return j;
}

Expected<Jwk> Jwk::from_json(const nlohmann::json &j) {
    Jwk jwk;
    jwk.kid = j.value("kid", "");
    jwk.alg = j.value("alg", "");
    jwk.kty = j.value("kty", "");
    if (jwk.kid.empty()) return Error{"key_error", "jwk missing kid"};
    for (auto &[k, v] : j.items()) {
        if (k != "kid" && k != "kty" && k != "alg" && k != "use") jwk.params[k] = v;
    }
    if (jwk.kty == "EC") {
        if (jwk.alg.empty()) jwk.alg = "ES256";
        auto key = ec_key_from_params(jwk.params);
        if (!key.ok()) return key.error();
        jwk.key = key.value();
    } else if (jwk.kty == "RSA") {
        if (jwk.alg.empty()) jwk.alg = "RS256";
        auto key = rsa_key_from_params(jwk.params);
        if (!key.ok()) return key.error();
        jwk.key = key.value();
    } else {
        return Error{"key_error", "unsupported jwk kty: " + jwk.kty};
    }
    return jwk;
}

Status KeySet::add(Jwk jwk) {
    if (find(jwk.kid)) return Error{"duplicate_kid", "duplicate kid: " + jwk.kid};
    keys_.push_back(std::move(jwk));
    return ok_status();
}

const Jwk *KeySet::find(const std::string &kid) const {
    for (const auto &k : keys_) {
        if (k.kid == kid) return &k;
    }
    return nullptr;
}

nlohmann::json KeySet::to_jwks() const {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto &k : keys_) keys.push_back(k.to_json());
    return nlohmann::json{{"keys", keys}};
}

Expected<KeySet> KeySet::from_jwks(const nlohmann::json &doc) {
    KeySet ks;
    if (!doc.contains("keys") || !doc["keys"].is_array()) {
        return Error{"key_error", "jwks document missing keys array"};
    }
    for (const auto &j : doc["keys"]) {
        auto jwk = Jwk::from_json(j);
        if (!jwk.ok()) return jwk.error();
        if (auto s = ks.add(jwk.value()); !s.ok()) return s.error();
    }
    return ks;
}

Expected<std::vector<uint8_t>> jose_sign(EVP_PKEY *key, const std::string &alg,
                                         std::string_view signing_input) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, EVP_sha256(), nullptr, key) != 1) {
        return Error{"key_error", "sign init: " + ssl_error()};
    }
    size_t len = 0;
    const auto *data = reinterpret_cast<const unsigned char *>(signing_input.data());
    if (EVP_DigestSign(ctx.get(), nullptr, &len, data, signing_input.size()) != 1) {
        return Error{"key_error", "sign size: " + ssl_error()};
    }
    std::vector<uint8_t> sig(len);
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, data, signing_input.size()) != 1) {
        return Error{"key_error", "sign: " + ssl_error()};
    }
    sig.resize(len);
    if (alg == "ES256") return ecdsa_der_to_raw(sig);
    return sig;
}

bool jose_verify(EVP_PKEY *key, const std::string &alg, std::string_view signing_input,
                 const std::vector<uint8_t> &signature) {
    std::vector<uint8_t> sig = signature;
    if (alg == "ES256") {
        auto der = ecdsa_raw_to_der(signature);
        if (!der.ok()) return false;
        sig = der.value();
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, EVP_sha256(), nullptr, key) != 1) {
        return false;
    }
    const auto *data = reinterpret_cast<const unsigned char *>(signing_input.data());
    return EVP_DigestVerify(ctx.get(), sig.data(), sig.size(), data, signing_input.size()) == 1;
}

} // namespace gridauth
