#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(stagewise::cli::dispatch(std::env::args_os()));
}
