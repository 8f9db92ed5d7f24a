use agent_kernel::cli::dispatch;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let (code, report) = dispatch(&argv);
    if !report.is_empty() {
        if code == 0 {
            println!("{report}");
        } else {
            eprintln!("{report}");
        }
    }
    std::process::exit(code);
}
