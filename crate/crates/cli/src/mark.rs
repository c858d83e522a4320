use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use modpipe_core::attack::{apply_attack, AttackSpec};
use modpipe_core::marker::{embed_metadata_marker, extract_markers, sign_marker, Polarity, Scheme};
use modpipe_core::model::{ContentItem, Modality};
use modpipe_core::trust::{verify_marker, IssuerPki, TrustStore};
use modpipe_core::watermark::{
    classify_correlation, detect_frequency, detect_statistical, embed_frequency, embed_statistical,
    DEFAULT_DELTA, DEFAULT_TAU,
};
use serde_json::json;

use crate::issuer::IssuerBundle;
use crate::{read_bytes, read_text, system_now, write_bytes, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "mark",
    version,
    about = "Embed, extract, detect and attack provenance markers"
)]
pub struct MarkCli {
    #[command(subcommand)]
    pub command: MarkCommand,
}

#[derive(Debug, Subcommand)]
pub enum MarkCommand {
    /// Create an issuer key with a three-certificate chain.
    Issuer {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        issuer_id: String,
        #[arg(long)]
        not_before: Option<i64>,
        #[arg(long)]
        not_after: Option<i64>,
        /// Issuer bundle for `embed --key`.
        #[arg(long)]
        out: PathBuf,
        /// Trust store holding the new root.
        #[arg(long)]
        trust_store: Option<PathBuf>,
    },
    /// Mark a media file.
    Embed {
        #[arg(long)]
        scheme: Scheme,
        /// Hex watermark key for keyed schemes, issuer bundle path otherwise.
        #[arg(long)]
        key: String,
        #[arg(long, default_value = "positive")]
        polarity: Polarity,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
    /// Print the markers in a file's sidecar block as JSON.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        marker: Option<PathBuf>,
    },
    /// Keyed schemes: correlation and polarity. Signed schemes: marker
    /// verification against a trust store.
    Detect {
        #[arg(long)]
        scheme: Scheme,
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        marker: Option<PathBuf>,
        #[arg(long)]
        trust_store: Option<PathBuf>,
        #[arg(long)]
        now: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Apply an attack, e.g. `--attack noise --params sigma=2,seed=7`.
    Attack {
        #[arg(long)]
        attack: String,
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Marker sidecar next to a media file: `x.ppm` → `x.dfmk`.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("dfmk")
}

/// Loads a media file and its sidecar block, if one exists.
pub fn load_item(input: &Path, marker: Option<&Path>) -> Result<ContentItem, CliError> {
    let modality = Modality::from_path(input)
        .ok_or_else(|| CliError::Usage(format!("{}: unknown media extension", input.display())))?;
    let id = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("item")
        .to_owned();
    let side = marker.map(Path::to_owned).unwrap_or_else(|| sidecar(input));
    let block = if marker.is_some() || side.exists() {
        Some(read_bytes(&side)?)
    } else {
        None
    };
    let item = ContentItem::new(id, modality, read_bytes(input)?).with_marker_block(block);
    item.check_payload()?;
    Ok(item)
}

/// Writes the payload and keeps the sidecar in step with the marker block.
pub fn save_item(item: &ContentItem, output: &Path) -> Result<(), CliError> {
    write_bytes(output, &item.payload)?;
    let side = sidecar(output);
    match &item.marker_block {
        Some(b) => write_bytes(&side, b),
        None if side.exists() => std::fs::remove_file(&side).map_err(CliError::io(&side)),
        None => Ok(()),
    }
}

pub fn parse_key(key: &str) -> Result<u64, CliError> {
    u64::from_str_radix(key.trim_start_matches("0x"), 16)
        .map_err(|_| CliError::Usage(format!("bad hex key `{key}`")))
}

pub fn main_with(cli: MarkCli) -> Result<(), CliError> {
    match cli.command {
        MarkCommand::Issuer {
            seed,
            issuer_id,
            not_before,
            not_after,
            out,
            trust_store,
        } => {
            let now = system_now();
            let nb = not_before.unwrap_or(now - 3600);
            let na = not_after.unwrap_or(now + 365 * 86_400);
            let pki = IssuerPki::generate(seed, &issuer_id, nb, na);
            let bundle = serde_json::to_string_pretty(&IssuerBundle::from_pki(&pki))
                .expect("bundle serializes");
            write_bytes(&out, bundle.as_bytes())?;
            if let Some(t) = trust_store {
                write_bytes(&t, pki.trust_store().to_json().as_bytes())?;
            }
            Ok(())
        }
        MarkCommand::Embed {
            scheme,
            key,
            polarity,
            input,
            output,
            delta,
        } => {
            let item = load_item(&input, None)?;
            let marked = match scheme {
                Scheme::Statistical => embed_statistical(&item, parse_key(&key)?, polarity)?,
                Scheme::Frequency => embed_frequency(&item, parse_key(&key)?, polarity, delta)?,
                Scheme::Metadata | Scheme::Cryptographic => {
                    let (issuer_key, chain) = IssuerBundle::load(Path::new(&key))?;
                    let m = sign_marker(&item, &issuer_key, scheme, polarity, &chain)?;
                    embed_metadata_marker(&item, &m)?
                }
            };
            save_item(&marked, &output)
        }
        MarkCommand::Extract { input, marker } => {
            let item = load_item(&input, marker.as_deref())?;
            let markers = extract_markers(&item)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&markers).expect("markers serialize")
            );
            Ok(())
        }
        MarkCommand::Detect {
            scheme,
            key,
            input,
            marker,
            trust_store,
            now,
            tau,
        } => {
            let item = load_item(&input, marker.as_deref())?;
            let out = if scheme.is_keyed() {
                let key = parse_key(
                    key.as_deref()
                        .ok_or_else(|| CliError::Usage("--key is required".into()))?,
                )?;
                let corr = match scheme {
                    Scheme::Statistical => detect_statistical(&item, key)?,
                    _ => detect_frequency(&item, key)?,
                };
                json!({"scheme": scheme, "correlation": corr, "polarity": classify_correlation(corr, tau)})
            } else {
                let store = match &trust_store {
                    Some(p) => TrustStore::from_json(&read_text(p)?)?,
                    None => {
                        return Err(CliError::Usage(
                            "--trust-store is required for signed schemes".into(),
                        ))
                    }
                };
                let now = now.unwrap_or_else(system_now);
                let results: Vec<_> = extract_markers(&item)?
                    .iter()
                    .filter(|m| m.scheme == scheme)
                    .map(|m| verify_marker(m, &item, &store, now))
                    .collect();
                json!({"scheme": scheme, "markers": results})
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(())
        }
        MarkCommand::Attack {
            attack,
            params,
            input,
            output,
        } => {
            let item = load_item(&input, None)?;
            let spec = AttackSpec::parse(&attack, &params)?;
            save_item(&apply_attack(&item, &spec)?, &output)
        }
    }
}
