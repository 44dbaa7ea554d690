// gettoken: fetch a short-lived access token for an experiment, reusing a
// cached token when it still satisfies the request, a stored broker token
// when one is live, the enrolled secondary key when there is one, and an
// interactive browser bootstrap as the last resort.

#include <chrono>
#include <cstdio>
#include <thread>

#include "CLI11.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/token_client.hpp"

using namespace gridauth;

int main(int argc, char **argv) {
    CLI::App app{"Obtain an access token from the token broker"};
    ClientOptions opts;
    bool print_token = false;
    bool verbose = false;

    app.add_option("-e,--experiment", opts.experiment, "Experiment (issuer alias)")->required();
    app.add_option("-r,--role", opts.role, "Role within the experiment");
    app.add_option("-s,--scopes", opts.scopes_text,
                   "Requested scopes, space or comma separated (default: the full grant)");
    app.add_option("-a,--audience", opts.audience, "Requested audience");
    app.add_option("-b,--broker", opts.broker_url,
                   "Broker base URL (default: $TOKEN_BROKER)");
    app.add_option("-o,--out", opts.out_path,
                   "Access-token file path ('-' writes no file; default: bearer layout)");
    app.add_option("--credkey", opts.credkey,
                   "Identity hint appended to the broker-token file name");
    app.add_option("--principal", opts.principal, "Principal (default: $USER)");
    app.add_option("--secondary-key", opts.secondary_key_file,
                   "Key file enabling browserless broker-token renewal");
    app.add_flag("--no-bootstrap", [&](size_t) { opts.allow_bootstrap = false; },
                 "Fail with auth-required instead of starting a browser flow");
    app.add_flag("-p,--print-token", print_token,
                 "Print the token itself instead of the file path");
    app.add_flag("-q,--quiet", opts.quiet, "No diagnostics on standard error");
    app.add_flag("-v,--verbose", verbose, "Report the token source and expiry");
    CLI11_PARSE(app, argc, argv);

    // Commas are accepted as scope separators on the command line.
    for (auto &c : opts.scopes_text)
        if (c == ',') c = ' ';

    opts.wait = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };

    auto env = Environment::from_process();
    auto clock = std::make_shared<SystemClock>();
    auto result = get_token(opts, env, clock);
    if (!result.ok()) {
        if (!opts.quiet)
            std::fprintf(stderr, "gettoken: %s: %s\n", result.error().code.c_str(),
                         result.error().message.c_str());
        return exit_code_for(result.error());
    }

    const GetTokenResult &r = result.value();
    if (verbose && !opts.quiet)
        std::fprintf(stderr, "gettoken: %s token, expires at %lld\n", r.source.c_str(),
                     static_cast<long long>(r.expires_at));
    if (print_token || r.access_path.empty())
        std::printf("%s\n", r.access_token.c_str());
    else
        std::printf("%s\n", r.access_path.c_str());
    return 0;
}
