#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tips {

// Stable error codes surfaced 1:1 through the CLI as `ERROR <CODE>: <message>`.
enum class ErrorCode {
    // crypto
    EntropyFailure,
    PlaintextTooLarge,
    AuthFailure,
    UnwrapFailure,
    MalformedKey,
    // identity
    InvalidSubject,
    InvalidCsr,
    DuplicateSubject,
    UntrustedIssuer,
    Expired,
    Revoked,
    UnknownSerial,
    // ledger
    DuplicateChannel,
    EmptyMembership,
    UnknownChannel,
    IdentityRejected,
    NotAMember,
    ContractError,
    PolicyNotMet,
    EndorsementMismatch,
    BrokenChain,
    ChannelClosed,
    // contract
    Tombstoned,
    EmptyKey,
    NotFound,
    IntegrityMismatch,
    NotAuthorised,
    // exchange
    NoPublishedKey,
    BundleTooLarge,
    PolicyDenied,
    MalformedBundle,
    // policy
    InvalidLocation,
    InvalidAttestation,
    // bench
    SetupFailure,
    EmptySweep,
    // cli / io
    UnknownCommand,
    UnknownIdentity,
    MalformedInput,
    IoError,
    DataDirNotEmpty,
};

constexpr std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EntropyFailure: return "ENTROPY_FAILURE";
        case ErrorCode::PlaintextTooLarge: return "PLAINTEXT_TOO_LARGE";
        case ErrorCode::AuthFailure: return "AUTH_FAILURE";
        case ErrorCode::UnwrapFailure: return "UNWRAP_FAILURE";
        case ErrorCode::MalformedKey: return "MALFORMED_KEY";
        case ErrorCode::InvalidSubject: return "INVALID_SUBJECT";
        case ErrorCode::InvalidCsr: return "INVALID_CSR";
        case ErrorCode::DuplicateSubject: return "DUPLICATE_SUBJECT";
        case ErrorCode::UntrustedIssuer: return "UNTRUSTED_ISSUER";
        case ErrorCode::Expired: return "EXPIRED";
        case ErrorCode::Revoked: return "REVOKED";
        case ErrorCode::UnknownSerial: return "UNKNOWN_SERIAL";
        case ErrorCode::DuplicateChannel: return "DUPLICATE_CHANNEL";
        case ErrorCode::EmptyMembership: return "EMPTY_MEMBERSHIP";
        case ErrorCode::UnknownChannel: return "UNKNOWN_CHANNEL";
        case ErrorCode::IdentityRejected: return "IDENTITY_REJECTED";
        case ErrorCode::NotAMember: return "NOT_A_MEMBER";
        case ErrorCode::ContractError: return "CONTRACT_ERROR";
        case ErrorCode::PolicyNotMet: return "POLICY_NOT_MET";
        case ErrorCode::EndorsementMismatch: return "ENDORSEMENT_MISMATCH";
        case ErrorCode::BrokenChain: return "BROKEN_CHAIN";
        case ErrorCode::ChannelClosed: return "CHANNEL_CLOSED";
        case ErrorCode::Tombstoned: return "TOMBSTONED";
        case ErrorCode::EmptyKey: return "EMPTY_KEY";
        case ErrorCode::NotFound: return "NOT_FOUND";
        case ErrorCode::IntegrityMismatch: return "INTEGRITY_MISMATCH";
        case ErrorCode::NotAuthorised: return "NOT_AUTHORISED";
        case ErrorCode::NoPublishedKey: return "NO_PUBLISHED_KEY";
        case ErrorCode::BundleTooLarge: return "BUNDLE_TOO_LARGE";
        case ErrorCode::PolicyDenied: return "POLICY_DENIED";
        case ErrorCode::MalformedBundle: return "MALFORMED_BUNDLE";
        case ErrorCode::InvalidLocation: return "INVALID_LOCATION";
        case ErrorCode::InvalidAttestation: return "INVALID_ATTESTATION";
        case ErrorCode::SetupFailure: return "SETUP_FAILURE";
        case ErrorCode::EmptySweep: return "EMPTY_SWEEP";
        case ErrorCode::UnknownCommand: return "UNKNOWN_COMMAND";
        case ErrorCode::UnknownIdentity: return "UNKNOWN_IDENTITY";
        case ErrorCode::MalformedInput: return "MALFORMED_INPUT";
        case ErrorCode::IoError: return "IO_ERROR";
        case ErrorCode::DataDirNotEmpty: return "DATA_DIR_NOT_EMPTY";
    }
    return "UNKNOWN";
}

// CLI process exit code for a given error; stable and documented in the README.
constexpr int error_exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownCommand: return 2;
        case ErrorCode::PolicyDenied: return 3;
        case ErrorCode::AuthFailure:
        case ErrorCode::UnwrapFailure:
        case ErrorCode::IntegrityMismatch:
        case ErrorCode::BrokenChain: return 4;
        case ErrorCode::IdentityRejected:
        case ErrorCode::UntrustedIssuer:
        case ErrorCode::Expired:
        case ErrorCode::Revoked:
        case ErrorCode::NotAMember:
        case ErrorCode::NotAuthorised: return 5;
        case ErrorCode::NotFound:
        case ErrorCode::UnknownSerial:
        case ErrorCode::UnknownChannel:
        case ErrorCode::UnknownIdentity:
        case ErrorCode::NoPublishedKey: return 6;
        case ErrorCode::PolicyNotMet:
        case ErrorCode::EndorsementMismatch:
        case ErrorCode::Tombstoned:
        case ErrorCode::ChannelClosed: return 7;
        default: return 1;
    }
}

class TipsError : public std::runtime_error {
  public:
    TipsError(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const { return code_; }
    std::string_view code_name() const { return error_code_name(code_); }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw TipsError(code, message);
}

}  // namespace tips
