use metaphor_core::ErrorKind;

/// A bad flag, config value or missing input path.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Inputs that exist but are malformed or inconsistent.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

/// Missing model weights or an unreachable network service.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ResourceError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn data(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

pub fn resource(msg: impl Into<String>) -> anyhow::Error {
    ResourceError(msg.into()).into()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

/// Exit status for an error, from the first categorized cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if cause.is::<ResourceError>() {
            return EXIT_RESOURCE;
        }
        if let Some(e) = cause.downcast_ref::<metaphor_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Resource => EXIT_RESOURCE,
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}
