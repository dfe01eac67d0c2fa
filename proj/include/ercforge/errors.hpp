// Error taxonomy shared across the toolkit. Exit-code mapping lives in the CLI:
// usage -> 2, data -> 3, backend -> 4.
#pragma once

#include <stdexcept>
#include <string>

namespace ercforge {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BackendError : std::runtime_error {
    enum class Kind {
        Unreachable,
        ModelNotFound,
        BudgetExceeded,
        JobFailed,
        Rejected,
        Protocol,
    };

    BackendError(Kind k, const std::string& message)
        : std::runtime_error(message), kind(k) {}

    Kind kind;
};

inline const char* backend_error_kind_name(BackendError::Kind k) {
    switch (k) {
        case BackendError::Kind::Unreachable: return "unreachable";
        case BackendError::Kind::ModelNotFound: return "model_not_found";
        case BackendError::Kind::BudgetExceeded: return "budget_exceeded";
        case BackendError::Kind::JobFailed: return "job_failed";
        case BackendError::Kind::Rejected: return "rejected";
        case BackendError::Kind::Protocol: return "protocol";
    }
    return "unknown";
}

}  // namespace ercforge
