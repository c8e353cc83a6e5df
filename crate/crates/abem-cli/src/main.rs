//! The `abem` command: file-based wrappers over the library operations, the
//! benchmark harness, and the transform proxy daemon.
//!
//! Every verb is a thin shell around one library call: read inputs, call,
//! write outputs atomically (temp file + rename, so an interrupted command
//! never leaves a partial file at the target path). Failures map to stable
//! exit codes by class:
//!
//! * 1 — input/output or internal failure
//! * 2 — usage: bad flags, bad policy text, bad key material requests
//! * 3 — decode: a file or reply that is not a well-formed object
//! * 4 — unsatisfied policy
//! * 5 — authentication failure opening the payload
//! * 6 — verification failure (message/witness check or echo mismatch)
//! * 7 — network failure talking to a proxy or binding the daemon
//!
//! `decrypt`, `recover`, and `verify` print `VERIFIED` on stdout only when
//! the message/witness check passed. Binary outputs switch to armored ASCII
//! under `--armor`; inputs are sniffed, so either form is always accepted.
//! `--seed` makes key generation and benchmarks deterministic for test
//! runs. The `ABEM_CURVE` environment variable (and the daemon's `--curve`
//! flag) name the pairing backend; this build supports `bls12-381`.

use abem::bilinear::LeftElement;
use abem::codec::{self, WireObject};
use abem::outsource::{gen_tk, recover, transform, PartialDecryption, RetrievalKey, TransformKey};
use abem::policy::{ParseError, PolicyAst};
use abem::proxy::{self, ClientError, ServerConfig, DEFAULT_MAX_FRAME};
use abem::scheme::{
    build_em, decrypt, em_encrypt, keygen, setup, verify_message, Ciphertext, EncryptionMachine,
    MasterKey, PublicKey, SchemeError, SecretKey,
};
use abem_cli::bench::{self, BenchError, TreeGenError};
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::env;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

const CURVE_NAME: &str = "bls12-381";

#[derive(Parser)]
#[command(
    name = "abem",
    version,
    about = "Attribute-based encryption with reusable encryption machines and verifiable outsourced decryption"
)]
struct Cli {
    /// Write outputs as armored ASCII instead of binary.
    #[arg(long, global = true)]
    armor: bool,
    /// Derive all randomness from this seed (deterministic test runs).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a public key and a master key.
    Setup {
        /// Output path for the public key.
        #[arg(long, value_name = "FILE")]
        pk_out: PathBuf,
        /// Output path for the master key.
        #[arg(long, value_name = "FILE")]
        mk_out: PathBuf,
    },
    /// Issue a secret key for an attribute set.
    Keygen {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        #[arg(long, value_name = "FILE")]
        mk: PathBuf,
        /// Comma-separated attribute names, e.g. "doctor,cardiology".
        #[arg(long, value_name = "LIST")]
        attrs: String,
        /// Output path for the secret key.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Encrypt a file under a policy or a saved encryption machine.
    Encrypt {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        /// Access policy text, e.g. "(A and B) or C".
        #[arg(
            long,
            value_name = "POLICY",
            required_unless_present = "em_file",
            conflicts_with = "em_file"
        )]
        policy: Option<String>,
        /// Reuse a saved encryption machine instead of building one.
        #[arg(long, value_name = "FILE")]
        em_file: Option<PathBuf>,
        /// Save the machine built from --policy for later reuse.
        #[arg(long, value_name = "FILE", requires = "policy")]
        build_em: Option<PathBuf>,
        /// Plaintext input file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Ciphertext output file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Decrypt a ciphertext and verify the recovered message.
    Decrypt {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        #[arg(long, value_name = "FILE")]
        sk: PathBuf,
        /// Ciphertext input file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Plaintext output file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write the 48-byte verification witness.
        #[arg(long, value_name = "FILE")]
        witness_out: Option<PathBuf>,
    },
    /// Blind a secret key into a transform key plus a retrieval key.
    GenTk {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        #[arg(long, value_name = "FILE")]
        sk: PathBuf,
        /// Output path for the transform key (safe to hand to a proxy).
        #[arg(long, value_name = "FILE")]
        tk_out: PathBuf,
        /// Output path for the retrieval key (keep private).
        #[arg(long, value_name = "FILE")]
        rk_out: PathBuf,
    },
    /// Run the pairing-heavy transform step, locally or via a proxy.
    Transform {
        /// Public key; required for local transforms.
        #[arg(long, value_name = "FILE", required_unless_present = "proxy")]
        pk: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        tk: PathBuf,
        /// Ciphertext input file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Partial-decryption output file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Transform remotely via the proxy at this address.
        #[arg(long, value_name = "ADDR")]
        proxy: Option<String>,
        /// Network timeout in seconds for --proxy; 0 waits forever.
        #[arg(long, value_name = "SECS", default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Finish an outsourced decryption from a partial decryption.
    Recover {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        #[arg(long, value_name = "FILE")]
        rk: PathBuf,
        /// The ciphertext the partial decryption claims to answer.
        #[arg(long, value_name = "FILE")]
        ct: PathBuf,
        /// Partial-decryption input file.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Plaintext output file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write the 48-byte verification witness.
        #[arg(long, value_name = "FILE")]
        witness_out: Option<PathBuf>,
    },
    /// Check a message/witness pair against a ciphertext.
    Verify {
        #[arg(long, value_name = "FILE")]
        pk: PathBuf,
        #[arg(long, value_name = "FILE")]
        ct: PathBuf,
        /// The claimed plaintext.
        #[arg(long, value_name = "FILE")]
        message: PathBuf,
        /// The 48-byte witness written by decrypt or recover.
        #[arg(long, value_name = "FILE")]
        witness: PathBuf,
    },
    /// Benchmark fresh encryption against encryption-machine reuse.
    Bench {
        #[arg(long, value_enum)]
        mode: BenchMode,
        /// Depth of the generated benchmark tree.
        #[arg(long, default_value_t = 10)]
        levels: u32,
        /// Leaf count of the generated benchmark tree.
        #[arg(long, default_value_t = 100)]
        leaves: usize,
        /// Encryption counts for reuse-sweep.
        #[arg(long, value_delimiter = ',', value_name = "N,..",
              default_values_t = [1u32, 2, 5, 10, 20, 50, 100])]
        counts: Vec<u32>,
        /// Message sizes in bytes for size-sweep.
        #[arg(long, value_delimiter = ',', value_name = "BYTES,..",
              default_values_t = [1usize << 20, 16 << 20, 64 << 20])]
        sizes: Vec<usize>,
        /// Repetitions per point (at least 5).
        #[arg(long, default_value_t = 5)]
        reps: u32,
        /// Message size in bytes for reuse-sweep.
        #[arg(long, default_value_t = 1024)]
        message_bytes: usize,
        /// CSV output path; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Generate a random benchmark policy and a satisfying attribute set.
    GenTree {
        #[arg(long)]
        levels: u32,
        #[arg(long)]
        leaves: usize,
    },
    /// Run the transform proxy daemon.
    Serve {
        /// Listen address, e.g. 127.0.0.1:7700; port 0 picks a free port.
        #[arg(long, value_name = "ADDR")]
        listen: String,
        /// Maximum accepted frame size in bytes.
        #[arg(long, value_name = "BYTES", default_value_t = DEFAULT_MAX_FRAME)]
        max_frame: u32,
        /// Corrupt every transform output (for exercising verification).
        #[arg(long)]
        byzantine: bool,
        /// Seed for the byzantine perturbation.
        #[arg(long, value_name = "U64", default_value_t = 0)]
        byzantine_seed: u64,
        /// Pairing curve descriptor; must match the build's backend.
        #[arg(long, value_name = "NAME", default_value = CURVE_NAME)]
        curve: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    ReuseSweep,
    SizeSweep,
}

/// Failure classes, one per exit code.
#[derive(Debug)]
enum CliError {
    Other(String),
    Usage(String),
    Decode(String),
    Unsatisfied(String),
    Authentication(String),
    Verification(String),
    Network(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Decode(_) => 3,
            CliError::Unsatisfied(_) => 4,
            CliError::Authentication(_) => 5,
            CliError::Verification(_) => 6,
            CliError::Network(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Other(m)
            | CliError::Usage(m)
            | CliError::Decode(m)
            | CliError::Unsatisfied(m)
            | CliError::Authentication(m)
            | CliError::Verification(m)
            | CliError::Network(m) => m,
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        let msg = e.to_string();
        match e {
            SchemeError::PolicyNotSatisfied => CliError::Unsatisfied(msg),
            SchemeError::AuthenticationFailure => CliError::Authentication(msg),
            SchemeError::VerificationFailure | SchemeError::EchoMismatch => {
                CliError::Verification(msg)
            }
            SchemeError::MalformedCiphertext | SchemeError::GroupMismatch => CliError::Decode(msg),
            SchemeError::Randomness(_) => CliError::Other(msg),
            SchemeError::EmptyAttributeSet
            | SchemeError::InvalidMasterKey
            | SchemeError::Attribute(_)
            | SchemeError::Policy(_) => CliError::Usage(msg),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let msg = e.to_string();
        match e {
            ClientError::NotSatisfied => CliError::Unsatisfied(msg),
            ClientError::Codec(_) => CliError::Decode(msg),
            ClientError::Io(_) | ClientError::Protocol(_) | ClientError::Server { .. } => {
                CliError::Network(msg)
            }
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TreeGenError> for CliError {
    fn from(e: TreeGenError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Scheme(s) => s.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// OS randomness by default; a seeded stream cipher under `--seed`.
enum CliRng {
    Os(OsRng),
    Seeded(ChaCha20Rng),
}

impl RngCore for CliRng {
    fn next_u32(&mut self) -> u32 {
        match self {
            CliRng::Os(r) => r.next_u32(),
            CliRng::Seeded(r) => r.next_u32(),
        }
    }

    fn next_u64(&mut self) -> u64 {
        match self {
            CliRng::Os(r) => r.next_u64(),
            CliRng::Seeded(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        match self {
            CliRng::Os(r) => r.fill_bytes(dest),
            CliRng::Seeded(r) => r.fill_bytes(dest),
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        match self {
            CliRng::Os(r) => r.try_fill_bytes(dest),
            CliRng::Seeded(r) => r.try_fill_bytes(dest),
        }
    }
}

impl CryptoRng for CliRng {}

fn make_rng(seed: Option<u64>) -> CliRng {
    match seed {
        Some(s) => CliRng::Seeded(ChaCha20Rng::seed_from_u64(s)),
        None => CliRng::Os(OsRng),
    }
}

fn check_curve(value: Option<&str>) -> Result<(), CliError> {
    match value {
        None => Ok(()),
        Some(v) if v.eq_ignore_ascii_case(CURVE_NAME) => Ok(()),
        Some(v) => Err(CliError::Usage(format!(
            "unsupported curve {v:?}; this build supports {CURVE_NAME}"
        ))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Other(format!("reading {}: {e}", path.display())))
}

/// Decodes one object from a file, accepting binary or armored form.
fn read_object<T: WireObject>(path: &Path) -> Result<T, CliError> {
    let bytes = read_file(path)?;
    let decode_err = |e: codec::CodecError| CliError::Decode(format!("{}: {e}", path.display()));
    if codec::looks_armored(&bytes) {
        let text = std::str::from_utf8(&bytes).map_err(|_| {
            CliError::Decode(format!("{}: armored data is not UTF-8", path.display()))
        })?;
        codec::decode_armored(text).map_err(decode_err)
    } else {
        codec::decode(&bytes).map_err(decode_err)
    }
}

fn write_object<T: WireObject>(path: &Path, obj: &T, armor: bool) -> Result<(), CliError> {
    if armor {
        write_atomic(path, codec::encode_armored(obj).as_bytes())
    } else {
        write_atomic(path, &codec::encode(obj))
    }
}

/// Writes via a temp file in the target directory plus a rename, so the
/// target path never holds a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let result = (|| {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    })();
    result.map_err(|e: io::Error| CliError::Other(format!("writing {}: {e}", path.display())))
}

fn split_attrs(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    check_curve(
        env::var("ABEM_CURVE")
            .ok()
            .filter(|v| !v.is_empty())
            .as_deref(),
    )?;
    let armor = cli.armor;
    let mut rng = make_rng(cli.seed);

    match cli.command {
        Command::Setup { pk_out, mk_out } => {
            let (pk, mk) = setup(&mut rng)?;
            write_object(&pk_out, &pk, armor)?;
            write_object(&mk_out, &mk, armor)?;
        }
        Command::Keygen { pk, mk, attrs, out } => {
            let pk: PublicKey = read_object(&pk)?;
            let mk: MasterKey = read_object(&mk)?;
            let sk = keygen(&pk, &mk, &split_attrs(&attrs), &mut rng)?;
            write_object(&out, &sk, armor)?;
        }
        Command::Encrypt {
            pk,
            policy,
            em_file,
            build_em: build_em_out,
            input,
            out,
        } => {
            let pk: PublicKey = read_object(&pk)?;
            let message = read_file(&input)?;
            let em: EncryptionMachine = match em_file {
                Some(path) => read_object(&path)?,
                None => {
                    let text = policy.expect("clap enforces --policy without --em-file");
                    let tree = PolicyAst::parse(&text)?;
                    let em = build_em(&pk, &tree, &mut rng)?;
                    if let Some(em_out) = build_em_out {
                        write_object(&em_out, &em, armor)?;
                    }
                    em
                }
            };
            let ct = em_encrypt(&pk, &em, &message, &mut rng)?;
            write_object(&out, &ct, armor)?;
        }
        Command::Decrypt {
            pk,
            sk,
            input,
            out,
            witness_out,
        } => {
            let pk: PublicKey = read_object(&pk)?;
            let sk: SecretKey = read_object(&sk)?;
            let ct: Ciphertext = read_object(&input)?;
            let dec = decrypt(&pk, &sk, &ct)?;
            write_atomic(&out, &dec.message)?;
            if let Some(path) = witness_out {
                write_atomic(&path, &dec.witness.encode())?;
            }
            println!("VERIFIED");
        }
        Command::GenTk {
            pk,
            sk,
            tk_out,
            rk_out,
        } => {
            let pk: PublicKey = read_object(&pk)?;
            let sk: SecretKey = read_object(&sk)?;
            let (tk, rk) = gen_tk(&pk, &sk, &mut rng)?;
            write_object(&tk_out, &tk, armor)?;
            write_object(&rk_out, &rk, armor)?;
        }
        Command::Transform {
            pk,
            tk,
            input,
            out,
            proxy: proxy_addr,
            timeout_secs,
        } => {
            let tk: TransformKey = read_object(&tk)?;
            let ct: Ciphertext = read_object(&input)?;
            let partial = match proxy_addr {
                Some(addr) => {
                    let timeout = (timeout_secs > 0).then(|| Duration::from_secs(timeout_secs));
                    proxy::client_transform(addr.as_str(), &tk, &ct, timeout)?
                }
                None => {
                    let path = pk.expect("clap enforces --pk without --proxy");
                    let pk: PublicKey = read_object(&path)?;
                    transform(&pk, &tk, &ct)?
                }
            };
            write_object(&out, &partial, armor)?;
        }
        Command::Recover {
            pk,
            rk,
            ct,
            input,
            out,
            witness_out,
        } => {
            let pk: PublicKey = read_object(&pk)?;
            let rk: RetrievalKey = read_object(&rk)?;
            let ct: Ciphertext = read_object(&ct)?;
            let partial: PartialDecryption = read_object(&input)?;
            let dec = recover(&pk, &rk, &ct, &partial)?;
            write_atomic(&out, &dec.message)?;
            if let Some(path) = witness_out {
                write_atomic(&path, &dec.witness.encode())?;
            }
            println!("VERIFIED");
        }
        Command::Verify {
            pk,
            ct,
            message,
            witness,
        } => {
            let pk: PublicKey = read_object(&pk)?;
            let ct: Ciphertext = read_object(&ct)?;
            let message = read_file(&message)?;
            let witness_bytes = read_file(&witness)?;
            let witness = LeftElement::decode(&witness_bytes)
                .map_err(|e| CliError::Decode(format!("witness: {e}")))?;
            if !verify_message(&pk, &ct, &message, &witness) {
                return Err(CliError::Verification(
                    "message/witness pair does not verify against the ciphertext".into(),
                ));
            }
            println!("VERIFIED");
        }
        Command::Bench {
            mode,
            levels,
            leaves,
            counts,
            sizes,
            reps,
            message_bytes,
            out,
        } => {
            let (pk, _mk) = setup(&mut rng)?;
            let generated = bench::gen_random_tree(levels, leaves, &mut rng)?;
            let records = match mode {
                BenchMode::ReuseSweep => {
                    if message_bytes == 0 {
                        return Err(CliError::Usage("--message-bytes must be at least 1".into()));
                    }
                    let mut message = vec![0u8; message_bytes];
                    rng.fill_bytes(&mut message);
                    bench::run_reuse_sweep(&pk, &generated.tree, &message, &counts, reps, &mut rng)?
                }
                BenchMode::SizeSweep => {
                    bench::run_size_sweep(&pk, &generated.tree, &sizes, reps, &mut rng)?
                }
            };
            let mut csv = Vec::new();
            bench::write_csv(&records, &mut csv)?;
            match out {
                Some(path) => write_atomic(&path, &csv)?,
                None => io::stdout().write_all(&csv)?,
            }
        }
        Command::GenTree { levels, leaves } => {
            let generated = bench::gen_random_tree(levels, leaves, &mut rng)?;
            println!("{}", generated.policy);
            println!("{}", generated.satisfying.join(","));
        }
        Command::Serve {
            listen,
            max_frame,
            byzantine,
            byzantine_seed,
            curve,
        } => {
            check_curve(Some(&curve))?;
            let config = ServerConfig {
                max_frame,
                byzantine_seed: byzantine.then_some(byzantine_seed),
            };
            let handle = proxy::spawn(listen.as_str(), config)
                .map_err(|e| CliError::Network(format!("binding {listen}: {e}")))?;
            println!("listening on {}", handle.local_addr());
            io::stdout().flush()?;
            loop {
                std::thread::park();
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
