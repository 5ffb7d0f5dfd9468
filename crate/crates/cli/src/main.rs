use sprecher_cli::alloc::CountingAlloc;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() {
    std::process::exit(sprecher_cli::run(std::env::args_os()));
}
