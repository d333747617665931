#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace raredx {

// Machine-readable error category carried by every library exception. The
// service layer maps these onto HTTP statuses and {code, message, details}.
enum class Errc {
    schema,
    prior_sum,
    dangling_reference,
    ontology,
    unknown_code,
    invalid_argument,
    infeasible,
    not_converged,
    contract_violation,
    evidence_impossible,
    conflict,
    too_imprecise,
    not_found,
    checksum,
    version,
    diverged,
    dimension,
    io,
};

inline const char* errc_name(Errc e) {
    switch (e) {
    case Errc::schema: return "schema";
    case Errc::prior_sum: return "prior_sum";
    case Errc::dangling_reference: return "dangling_reference";
    case Errc::ontology: return "ontology";
    case Errc::unknown_code: return "unknown_code";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::infeasible: return "infeasible";
    case Errc::not_converged: return "not_converged";
    case Errc::contract_violation: return "contract_violation";
    case Errc::evidence_impossible: return "evidence_impossible";
    case Errc::conflict: return "conflict";
    case Errc::too_imprecise: return "too_imprecise";
    case Errc::not_found: return "not_found";
    case Errc::checksum: return "checksum";
    case Errc::version: return "version";
    case Errc::diverged: return "diverged";
    case Errc::dimension: return "dimension";
    case Errc::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, std::string details = {})
        : std::runtime_error(std::string(errc_name(code)) + ": " + message),
          code_(code), message_(message), details_(std::move(details)) {}

    Errc code() const noexcept { return code_; }
    const std::string& message() const noexcept { return message_; }
    const std::string& details() const noexcept { return details_; }

private:
    Errc code_;
    std::string message_;
    std::string details_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message, std::string details = {}) {
    throw Error(code, message, std::move(details));
}

} // namespace raredx
