from fp_bandits.cli import main

main()
